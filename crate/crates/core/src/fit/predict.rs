use std::collections::BTreeMap;

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::design::{ModelStructure, INTERCEPT};
use super::FitError;
use crate::data::DataTable;
use crate::linalg::sorted_eigen;

/// Read access shared by full and stripped models.
pub trait PredictiveModel {
    fn label(&self) -> &str;
    fn n_obs(&self) -> usize;
    fn structure(&self) -> &ModelStructure;
    /// Intercept, parametric and smooth coefficients.
    fn fixed_coefficients(&self) -> &[f64];
    /// Covariance of [`fixed_coefficients`](Self::fixed_coefficients).
    fn fixed_covariance(&self) -> DMatrixView<'_, f64>;
    fn edf(&self) -> &BTreeMap<String, f64>;
    fn covariate_ranges(&self) -> &BTreeMap<String, (f64, f64)>;
    fn covariate_deciles(&self) -> &BTreeMap<String, Vec<f64>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Add the intercept to the fitted values (and its variance to se).
    pub include_intercept: bool,
    /// Report se of the intercept plus the term while leaving the intercept
    /// out of the fitted values.
    pub intercept_uncertainty: bool,
}

impl PredictOptions {
    pub fn term_only() -> Self {
        Self::default()
    }

    pub fn with_intercept() -> Self {
        PredictOptions {
            include_intercept: true,
            intercept_uncertainty: true,
        }
    }

    pub fn with_mean_uncertainty() -> Self {
        PredictOptions {
            include_intercept: false,
            intercept_uncertainty: true,
        }
    }
}

/// One cohort's estimate of a term along a covariate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermPrediction {
    pub label: String,
    pub term: String,
    pub n: usize,
    pub grid: DataTable,
    pub fit: Vec<f64>,
    pub se: Vec<f64>,
    /// Whether each grid point lies inside the covariate range seen in fitting.
    pub in_range: Vec<bool>,
    pub includes_intercept: bool,
}

impl TermPrediction {
    pub fn len(&self) -> usize {
        self.fit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fit.is_empty()
    }
}

pub fn predict_term<M: PredictiveModel + ?Sized>(
    model: &M,
    term: &str,
    grid: &DataTable,
    include_intercept: bool,
) -> Result<TermPrediction, FitError> {
    let options = if include_intercept {
        PredictOptions::with_intercept()
    } else {
        PredictOptions::term_only()
    };
    predict_term_with(model, term, grid, options)
}

pub fn predict_term_with<M: PredictiveModel + ?Sized>(
    model: &M,
    term: &str,
    grid: &DataTable,
    options: PredictOptions,
) -> Result<TermPrediction, FitError> {
    let structure = model.structure();
    if term == INTERCEPT {
        return Err(FitError::UnknownTerm(term.to_string()));
    }
    let block = structure
        .block(term)
        .ok_or_else(|| FitError::UnknownTerm(term.to_string()))?;
    let cols = structure.term_columns(term, grid)?;
    let m = grid.n_rows();
    let p = structure.n_fixed();
    let mut rows = DMatrix::zeros(m, p);
    rows.view_mut((0, block.start), (m, block.len))
        .copy_from(&cols);
    if options.include_intercept {
        rows.column_mut(0).fill(1.0);
    }
    let beta = DVector::from_column_slice(model.fixed_coefficients());
    let fit: Vec<f64> = (&rows * &beta).iter().copied().collect();
    if options.intercept_uncertainty {
        rows.column_mut(0).fill(1.0);
    }
    let v = model.fixed_covariance();
    let rv = &rows * v;
    let se = (0..m)
        .map(|i| rv.row(i).dot(&rows.row(i)).max(0.0).sqrt())
        .collect();

    let in_range = match structure.smooths.iter().find(|s| s.id == term) {
        Some(s) => {
            let x = grid.numeric(&s.covariate)?;
            let (lo, hi) = model
                .covariate_ranges()
                .get(&s.covariate)
                .copied()
                .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            let tol = 1e-9 * (hi - lo).abs().max(1.0);
            x.iter().map(|&v| v >= lo - tol && v <= hi + tol).collect()
        }
        None => vec![true; m],
    };

    Ok(TermPrediction {
        label: model.label().to_string(),
        term: term.to_string(),
        n: model.n_obs(),
        grid: grid.clone(),
        fit,
        se,
        in_range,
        includes_intercept: options.include_intercept,
    })
}

/// Wald test that a term is zero. Smooths are tested through their values
/// at the covariate deciles with a rank set by the term's effective degrees
/// of freedom; parametric terms through their coefficients.
pub fn term_pvalue<M: PredictiveModel + ?Sized>(model: &M, term: &str) -> Result<f64, FitError> {
    let structure = model.structure();
    let block = structure
        .block(term)
        .filter(|b| b.term != INTERCEPT)
        .ok_or_else(|| FitError::UnknownTerm(term.to_string()))?;
    let beta = DVector::from_column_slice(model.fixed_coefficients());
    let theta = beta.rows(block.start, block.len).into_owned();
    let v_theta = model
        .fixed_covariance()
        .view((block.start, block.start), (block.len, block.len))
        .into_owned();

    let (values, v, max_rank) = match structure.smooths.iter().find(|s| s.id == term) {
        Some(s) => {
            let deciles = model
                .covariate_deciles()
                .get(&s.covariate)
                .ok_or_else(|| FitError::UnknownTerm(s.covariate.clone()))?;
            let b = s.constrained_design(deciles);
            let f = &b * &theta;
            let vf = &b * v_theta * b.transpose();
            let edf = model.edf().get(term).copied().unwrap_or(block.len as f64);
            let r = (edf.round() as usize).clamp(1, block.len.min(deciles.len()).max(1));
            (f, vf, r)
        }
        None => (theta, v_theta, block.len),
    };
    Ok(wald_pvalue(&values, &v, max_rank))
}

/// `χ²_r` tail probability of `fᵀ V⁻ f` using a rank-`r` pseudo-inverse,
/// floored at the smallest positive double so that it stays a valid input
/// to p-value combination.
pub(crate) fn wald_pvalue(f: &DVector<f64>, v: &DMatrix<f64>, rank: usize) -> f64 {
    let (values, vectors) = sorted_eigen(v);
    let max = values.first().copied().unwrap_or(0.0);
    let usable = values
        .iter()
        .take(rank)
        .take_while(|&&l| l > max * 1e-12 && l > 0.0)
        .count();
    if usable == 0 {
        return if f.iter().all(|x| *x == 0.0) {
            1.0
        } else {
            f64::MIN_POSITIVE
        };
    }
    let stat: f64 = (0..usable)
        .map(|i| vectors.column(i).dot(f).powi(2) / values[i])
        .sum();
    let chi = ChiSquared::new(usable as f64).expect("positive degrees of freedom");
    chi.sf(stat).clamp(f64::MIN_POSITIVE, 1.0)
}
