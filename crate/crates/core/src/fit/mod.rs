//! Penalized regression-spline fitting with GCV smoothing-parameter
//! selection, term prediction and Wald tests.

mod design;
mod predict;
mod solver;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design::{
    CoefBlock, Design, LinearEncoding, ModelStructure, Penalty, RandomIntercept, INTERCEPT,
};
pub use predict::{
    predict_term, predict_term_with, term_pvalue, PredictOptions, PredictiveModel, TermPrediction,
};
pub use solver::{GcvSelection, LambdaGrid};

use crate::data::{DataError, DataTable};
use crate::formula::{FormulaError, ModelFormula};
use crate::spline::BasisError;

pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("rank-deficient design in term `{term}`: {detail}")]
    RankDeficientDesign { term: String, detail: String },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteData { column: String, row: usize },
    #[error("{0} observations is too few to fit (need at least 10)")]
    TooFewObservations(usize),
    #[error("grouping column `{0}` has a single level")]
    SingleGroup(String),
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("level `{level}` of `{column}` was not seen when fitting")]
    UnknownLevel { column: String, level: String },
    #[error("model has no random intercept term")]
    NoRandomIntercept,
    #[error("expected {expected} smoothing parameters, got {found}")]
    LambdaCount { expected: usize, found: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda_grid: LambdaGrid,
    /// Skip GCV and use these smoothing parameters, one per penalized term.
    pub fixed_lambdas: Option<Vec<f64>>,
    pub label: String,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda_grid: LambdaGrid::default(),
            fixed_lambdas: None,
            label: "cohort".into(),
        }
    }
}

impl FitOptions {
    pub fn labelled(label: impl Into<String>) -> Self {
        FitOptions {
            label: label.into(),
            ..Self::default()
        }
    }
}

/// A fitted model together with the data it was fitted to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedGam {
    pub label: String,
    pub formula: ModelFormula,
    pub structure: ModelStructure,
    pub random_intercept: Option<RandomIntercept>,
    /// Fixed effects followed by random-intercept predictions.
    pub coefficients: Vec<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub covariance: DMatrix<f64>,
    pub scale: f64,
    pub lambdas: BTreeMap<String, f64>,
    pub edf: BTreeMap<String, f64>,
    pub edf_total: f64,
    pub gcv_score: f64,
    pub n: usize,
    pub n_subjects: Option<usize>,
    pub term_pvalues: BTreeMap<String, f64>,
    pub covariate_ranges: BTreeMap<String, (f64, f64)>,
    pub covariate_deciles: BTreeMap<String, Vec<f64>>,
    pub fitted_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub model_frame: DataTable,
}

impl FittedGam {
    pub fn n_fixed(&self) -> usize {
        self.structure.n_fixed()
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Coefficients of one term.
    pub fn term_coefficients(&self, term: &str) -> Option<&[f64]> {
        if let Some(r) = &self.random_intercept {
            if r.term() == term {
                return Some(&self.coefficients[self.n_fixed()..]);
            }
        }
        let b = self.structure.block(term)?;
        Some(&self.coefficients[b.start..b.start + b.len])
    }
}

impl PredictiveModel for FittedGam {
    fn label(&self) -> &str {
        &self.label
    }
    fn n_obs(&self) -> usize {
        self.n
    }
    fn structure(&self) -> &ModelStructure {
        &self.structure
    }
    fn fixed_coefficients(&self) -> &[f64] {
        &self.coefficients[..self.n_fixed()]
    }
    fn fixed_covariance(&self) -> DMatrixView<'_, f64> {
        let p = self.n_fixed();
        self.covariance.view((0, 0), (p, p))
    }
    fn edf(&self) -> &BTreeMap<String, f64> {
        &self.edf
    }
    fn covariate_ranges(&self) -> &BTreeMap<String, (f64, f64)> {
        &self.covariate_ranges
    }
    fn covariate_deciles(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.covariate_deciles
    }
}

/// Builds the design matrix and penalties without fitting. Smoothing
/// parameters apply to `penalties` in order: smooth terms, then the random
/// intercept.
pub fn model_matrix(data: &DataTable, formula: &ModelFormula) -> Result<Design, FitError> {
    design::build_design(data, formula)
}

/// Selects one smoothing parameter per penalized term by minimizing GCV
/// over `grid`.
pub fn select_lambda_gcv(
    data: &DataTable,
    formula: &ModelFormula,
    grid: &LambdaGrid,
) -> Result<GcvSelection, FitError> {
    let d = design::build_design(data, formula)?;
    let problem = solver::PenalizedLs::new(&d.x, &d.y, &d.penalties);
    solver::select_lambda(&problem, grid)
}

pub fn fit_gam(
    data: &DataTable,
    formula: &ModelFormula,
    options: &FitOptions,
) -> Result<FittedGam, FitError> {
    let d = design::build_design(data, formula)?;
    let problem = solver::PenalizedLs::new(&d.x, &d.y, &d.penalties);
    let lambdas = match &options.fixed_lambdas {
        Some(l) => {
            if l.len() != problem.n_penalties() {
                return Err(FitError::LambdaCount {
                    expected: problem.n_penalties(),
                    found: l.len(),
                });
            }
            l.clone()
        }
        None => solver::select_lambda(&problem, &options.lambda_grid)?.lambdas,
    };
    let sol = problem.solve(&lambdas)?;
    let n = data.n_rows();

    let fitted: DVector<f64> = &d.x * &sol.beta;
    let residuals: Vec<f64> = d.y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let resid_df = (n as f64 - sol.edf).max(1.0);
    let scale = rss / resid_df;
    let covariance = &sol.a_inv * scale;

    let blocks = d.blocks();
    let mut edf = BTreeMap::new();
    for b in &blocks {
        let e: f64 = sol.edf_diag[b.start..b.start + b.len].iter().sum();
        edf.insert(b.term.clone(), e);
    }
    let lambda_map = d
        .penalties
        .iter()
        .zip(&lambdas)
        .map(|(p, &l)| (p.term.clone(), l))
        .collect();

    let mut covariate_ranges = BTreeMap::new();
    let mut covariate_deciles = BTreeMap::new();
    for name in numeric_covariates(&d.structure) {
        let mut x = data.numeric(&name)?.to_vec();
        x.sort_by(f64::total_cmp);
        covariate_ranges.insert(name.clone(), (x[0], x[x.len() - 1]));
        let deciles = (1..10)
            .map(|i| crate::spline::quantile_type7(&x, i as f64 / 10.0))
            .collect();
        covariate_deciles.insert(name, deciles);
    }

    let mut model = FittedGam {
        label: options.label.clone(),
        formula: formula.clone(),
        n_subjects: d.random.as_ref().map(|r| r.levels.len()),
        structure: d.structure,
        random_intercept: d.random,
        coefficients: sol.beta.iter().copied().collect(),
        covariance,
        scale,
        lambdas: lambda_map,
        edf,
        edf_total: sol.edf,
        gcv_score: solver::gcv_score(n, sol.rss, sol.edf),
        n,
        term_pvalues: BTreeMap::new(),
        covariate_ranges,
        covariate_deciles,
        fitted_values: fitted.iter().copied().collect(),
        residuals,
        model_frame: model_frame(data, formula)?,
    };
    for b in model.structure.blocks().iter().skip(1) {
        let p = term_pvalue(&model, &b.term)?;
        model.term_pvalues.insert(b.term.clone(), p);
    }
    Ok(model)
}

/// Fits a model that must contain a `(1|group)` term, estimated as a
/// ridge-penalized block with its variance chosen by GCV.
pub fn fit_random_intercept(
    data: &DataTable,
    formula: &ModelFormula,
    options: &FitOptions,
) -> Result<FittedGam, FitError> {
    if formula.random_intercept.is_none() {
        return Err(FitError::NoRandomIntercept);
    }
    fit_gam(data, formula, options)
}

fn numeric_covariates(structure: &ModelStructure) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in &structure.smooths {
        names.push(s.covariate.clone());
        names.extend(s.by_variable.clone());
    }
    for l in &structure.linear {
        if let LinearEncoding::Numeric { column } = l {
            names.push(column.clone());
        }
    }
    names.sort();
    names.dedup();
    names
}

fn model_frame(data: &DataTable, formula: &ModelFormula) -> Result<DataTable, FitError> {
    let mut frame = DataTable::new();
    for name in formula.columns() {
        frame.push(&name, data.column(&name)?.clone())?;
    }
    Ok(frame)
}
