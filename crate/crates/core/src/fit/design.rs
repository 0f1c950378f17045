use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::data::{Column, DataTable};
use crate::formula::ModelFormula;
use crate::linalg::{null_space, sorted_eigen};
use crate::spline::{penalty_matrix, place_knots, SmoothSpec};

pub const INTERCEPT: &str = "(Intercept)";

/// How a parametric term maps to design columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LinearEncoding {
    Numeric {
        column: String,
    },
    /// Treatment coding: one indicator per level after the first.
    Factor {
        column: String,
        levels: Vec<String>,
    },
}

impl LinearEncoding {
    pub fn column(&self) -> &str {
        match self {
            LinearEncoding::Numeric { column } | LinearEncoding::Factor { column, .. } => column,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            LinearEncoding::Numeric { .. } => 1,
            LinearEncoding::Factor { levels, .. } => levels.len() - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomIntercept {
    pub column: String,
    pub levels: Vec<String>,
}

impl RandomIntercept {
    pub fn term(&self) -> String {
        format!("(1|{})", self.column)
    }
}

/// Contiguous coefficient range belonging to one model term.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefBlock {
    pub term: String,
    pub start: usize,
    pub len: usize,
}

/// Fixed-effect structure shared by full and stripped models: everything
/// needed to rebuild a design row from covariate values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub linear: Vec<LinearEncoding>,
    pub smooths: Vec<SmoothSpec>,
}

impl ModelStructure {
    /// Intercept, then parametric terms, then smooths.
    pub fn blocks(&self) -> Vec<CoefBlock> {
        let mut blocks = vec![CoefBlock {
            term: INTERCEPT.into(),
            start: 0,
            len: 1,
        }];
        let mut start = 1;
        for l in &self.linear {
            blocks.push(CoefBlock {
                term: l.column().to_string(),
                start,
                len: l.width(),
            });
            start += l.width();
        }
        for s in &self.smooths {
            blocks.push(CoefBlock {
                term: s.id.clone(),
                start,
                len: s.n_coefficients(),
            });
            start += s.n_coefficients();
        }
        blocks
    }

    pub fn n_fixed(&self) -> usize {
        1 + self.linear.iter().map(LinearEncoding::width).sum::<usize>()
            + self
                .smooths
                .iter()
                .map(SmoothSpec::n_coefficients)
                .sum::<usize>()
    }

    pub fn block(&self, term: &str) -> Option<CoefBlock> {
        self.blocks().into_iter().find(|b| b.term == term)
    }

    /// Design columns of `term` for every row of `data`, shape `n × len`.
    pub fn term_columns(&self, term: &str, data: &DataTable) -> Result<DMatrix<f64>, FitError> {
        let n = data.n_rows();
        if term == INTERCEPT {
            return Ok(DMatrix::from_element(n, 1, 1.0));
        }
        if let Some(l) = self.linear.iter().find(|l| l.column() == term) {
            return match l {
                LinearEncoding::Numeric { column } => {
                    let x = finite_column(data, column)?;
                    Ok(DMatrix::from_column_slice(n, 1, x))
                }
                LinearEncoding::Factor { column, levels } => {
                    let col = data.column(column)?;
                    let mut m = DMatrix::zeros(n, levels.len() - 1);
                    for i in 0..n {
                        let label = col.label(i);
                        let level = levels.iter().position(|l| *l == label).ok_or_else(|| {
                            FitError::UnknownLevel {
                                column: column.clone(),
                                level: label.clone(),
                            }
                        })?;
                        if level > 0 {
                            m[(i, level - 1)] = 1.0;
                        }
                    }
                    Ok(m)
                }
            };
        }
        if let Some(s) = self.smooths.iter().find(|s| s.id == term) {
            let x = finite_column(data, &s.covariate)?;
            let mut m = s.constrained_design(x);
            if let Some(by) = &s.by_variable {
                let b = finite_column(data, by)?;
                for (mut row, &v) in m.row_iter_mut().zip(b) {
                    row *= v;
                }
            }
            return Ok(m);
        }
        Err(FitError::UnknownTerm(term.to_string()))
    }
}

pub(crate) fn finite_column<'a>(data: &'a DataTable, name: &str) -> Result<&'a [f64], FitError> {
    let x = data.numeric(name)?;
    if let Some(row) = x.iter().position(|v| !v.is_finite()) {
        return Err(FitError::NonFiniteData {
            column: name.to_string(),
            row: row + 1,
        });
    }
    Ok(x)
}

/// Penalty on the coefficient block starting at `start`.
pub struct Penalty {
    pub term: String,
    pub start: usize,
    pub matrix: DMatrix<f64>,
}

/// Assembled design matrix, response and scaled penalties of a model.
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub structure: ModelStructure,
    pub random: Option<RandomIntercept>,
    pub penalties: Vec<Penalty>,
}

impl Design {
    pub fn blocks(&self) -> Vec<CoefBlock> {
        let mut blocks = self.structure.blocks();
        if let Some(r) = &self.random {
            blocks.push(CoefBlock {
                term: r.term(),
                start: self.structure.n_fixed(),
                len: r.levels.len(),
            });
        }
        blocks
    }
}

/// Levels actually present in a column, in the column's level order.
fn present_levels(col: &Column) -> Vec<String> {
    match col {
        Column::Factor { levels, codes } => {
            let mut used = vec![false; levels.len()];
            for &c in codes {
                used[c] = true;
            }
            levels
                .iter()
                .zip(used)
                .filter(|(_, u)| *u)
                .map(|(l, _)| l.clone())
                .collect()
        }
        Column::Numeric { values } => {
            let mut v = values.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.iter().map(|x| x.to_string()).collect()
        }
    }
}

pub fn build_design(data: &DataTable, formula: &ModelFormula) -> Result<Design, FitError> {
    formula.validate()?;
    let n = data.n_rows();
    if n < super::MIN_OBSERVATIONS {
        return Err(FitError::TooFewObservations(n));
    }
    let y = DVector::from_column_slice(finite_column(data, &formula.response)?);

    let mut linear = Vec::new();
    for name in &formula.linear_terms {
        let enc = match data.column(name)? {
            Column::Numeric { .. } => {
                finite_column(data, name)?;
                LinearEncoding::Numeric {
                    column: name.clone(),
                }
            }
            col @ Column::Factor { .. } => LinearEncoding::Factor {
                column: name.clone(),
                levels: present_levels(col),
            },
        };
        linear.push(enc);
    }

    let mut smooths = Vec::new();
    for term in &formula.smooth_terms {
        let x = finite_column(data, &term.covariate)?;
        if let Some(by) = &term.by_variable {
            finite_column(data, by)?;
        }
        let knots = match &term.knots {
            Some(k) => k.clone(),
            None => place_knots(x, term.basis_dim, term.knot_rule)?,
        };
        if knots.basis_dim() != term.basis_dim {
            return Err(FitError::Basis(crate::spline::BasisError::InvalidKnots(
                format!(
                    "{} requests k={} but its knots give {}",
                    term.id(),
                    term.basis_dim,
                    knots.basis_dim()
                ),
            )));
        }
        let constraint = term.constraint.resolve(&knots, x)?;
        smooths.push(SmoothSpec::new(
            term.id(),
            term.covariate.clone(),
            knots,
            constraint,
            term.by_variable.clone(),
        )?);
    }

    let random = match &formula.random_intercept {
        Some(g) => {
            let levels = present_levels(data.column(g)?);
            if levels.len() < 2 {
                return Err(FitError::SingleGroup(g.clone()));
            }
            Some(RandomIntercept {
                column: g.clone(),
                levels,
            })
        }
        None => None,
    };

    let structure = ModelStructure { linear, smooths };
    check_data_support(&structure, data)?;

    let n_fixed = structure.n_fixed();
    let p = n_fixed + random.as_ref().map_or(0, |r| r.levels.len());
    let mut x = DMatrix::zeros(n, p);
    for block in structure.blocks() {
        let cols = structure.term_columns(&block.term, data)?;
        x.view_mut((0, block.start), (n, block.len))
            .copy_from(&cols);
    }
    if let Some(r) = &random {
        let col = data.column(&r.column)?;
        for i in 0..n {
            let label = col.label(i);
            let g = r.levels.iter().position(|l| *l == label).unwrap();
            x[(i, n_fixed + g)] = 1.0;
        }
    }

    let blocks = structure.blocks();
    let mut penalties = Vec::new();
    for s in &structure.smooths {
        let b = blocks.iter().find(|b| b.term == s.id).unwrap();
        penalties.push(scaled_penalty(&x, &s.id, b.start, penalty_matrix(s)));
    }
    if let Some(r) = &random {
        let k = r.levels.len();
        penalties.push(scaled_penalty(
            &x,
            &r.term(),
            n_fixed,
            DMatrix::identity(k, k),
        ));
    }

    let design = Design {
        x,
        y,
        structure,
        random,
        penalties,
    };
    check_unpenalized_rank(&design)?;
    Ok(design)
}

/// Rescales a penalty to the magnitude of its block of `XᵀX` so a single
/// smoothing-parameter grid suits any covariate scale or sample size.
fn scaled_penalty(x: &DMatrix<f64>, term: &str, start: usize, s: DMatrix<f64>) -> Penalty {
    let cols = x.columns(start, s.ncols());
    let gram = cols.transpose() * cols;
    let scale = gram.norm() / s.norm();
    let scale = if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    };
    Penalty {
        term: term.to_string(),
        start,
        matrix: s * scale,
    }
}

/// Every B-spline of every smooth must be nonzero at some observation with
/// a nonzero `by` value; otherwise its weight is determined by the penalty
/// alone and not by data.
fn check_data_support(structure: &ModelStructure, data: &DataTable) -> Result<(), FitError> {
    for s in &structure.smooths {
        let x = finite_column(data, &s.covariate)?;
        let active: Vec<f64> = match &s.by_variable {
            Some(by) => {
                let b = finite_column(data, by)?;
                x.iter()
                    .zip(b)
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(&v, _)| v)
                    .collect()
            }
            None => x.to_vec(),
        };
        let design = s.basis().design(&active);
        let unsupported: Vec<usize> = (0..design.ncols())
            .filter(|&j| design.column(j).amax() <= 1e-12)
            .collect();
        if !unsupported.is_empty() {
            return Err(FitError::RankDeficientDesign {
                term: s.id.clone(),
                detail: format!(
                    "basis functions {:?} of {} have no observations in their support; \
                     the knots do not match this dataset's covariate range",
                    unsupported.iter().map(|j| j + 1).collect::<Vec<_>>(),
                    s.basis_dim
                ),
            });
        }
    }
    Ok(())
}

/// The unpenalized directions (intercept, parametric columns and each
/// penalty's null space) must have a full-rank design.
fn check_unpenalized_rank(design: &Design) -> Result<(), FitError> {
    let x = &design.x;
    let n = x.nrows();
    let mut cols: Vec<(String, DVector<f64>)> = Vec::new();
    let penalized: BTreeMap<usize, &Penalty> =
        design.penalties.iter().map(|p| (p.start, p)).collect();
    for block in design.blocks() {
        match penalized.get(&block.start) {
            Some(p) => {
                let ns = null_space(&p.matrix, 1e-9);
                let xs = x.columns(block.start, block.len) * ns;
                for c in xs.column_iter() {
                    cols.push((block.term.clone(), c.into_owned()));
                }
            }
            None => {
                for j in 0..block.len {
                    cols.push((block.term.clone(), x.column(block.start + j).into_owned()));
                }
            }
        }
    }
    let mut u = DMatrix::zeros(n, cols.len());
    for (j, (term, c)) in cols.iter().enumerate() {
        let norm = c.norm();
        if norm == 0.0 {
            return Err(FitError::RankDeficientDesign {
                term: term.clone(),
                detail: "column is identically zero".into(),
            });
        }
        u.set_column(j, &(c / norm));
    }
    let (values, vectors) = sorted_eigen(&(u.transpose() * &u));
    let max = values[0];
    if let Some(last) = values.iter().rposition(|&v| v <= 1e-10 * max) {
        // Name the terms loading on the weakest direction.
        let dir = vectors.column(last);
        let mut terms: Vec<&str> = cols
            .iter()
            .zip(dir.iter())
            .filter(|(_, w)| w.abs() > 1e-3)
            .map(|((t, _), _)| t.as_str())
            .collect();
        terms.dedup();
        return Err(FitError::RankDeficientDesign {
            term: terms.first().copied().unwrap_or(INTERCEPT).to_string(),
            detail: format!("unpenalized columns are collinear among terms {terms:?}"),
        });
    }
    Ok(())
}
