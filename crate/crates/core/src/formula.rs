//! Model formulas and the small formula language used by the CLI:
//!
//! ```text
//! y ~ s(x, k=10) + s(x, by=z, k=10) + z + (1|id)
//! ```
//!
//! Smooth options: `k` (basis dimension), `by` (numeric multiplier),
//! `pc` (point constraint location) and `knots=lo:hi` (evenly spaced knots
//! on a fixed interval instead of per-dataset quantiles).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spline::{ConstraintKind, KnotSequence, PlacementRule};

pub const DEFAULT_BASIS_DIM: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("formula parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("response `{0}` also appears as a covariate")]
    ResponseAsCovariate(String),
}

/// A smooth term as written in a formula; knots are resolved against data
/// when the model is fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub covariate: String,
    pub basis_dim: usize,
    pub by_variable: Option<String>,
    pub constraint: ConstraintKind,
    pub knot_rule: PlacementRule,
    /// Fixed knots, used instead of `knot_rule` when present.
    pub knots: Option<KnotSequence>,
}

impl SmoothTerm {
    pub fn new(covariate: impl Into<String>, basis_dim: usize) -> Self {
        Self {
            covariate: covariate.into(),
            basis_dim,
            by_variable: None,
            constraint: ConstraintKind::SumToZero,
            knot_rule: PlacementRule::Quantile,
            knots: None,
        }
    }

    pub fn by(mut self, by: impl Into<String>) -> Self {
        self.by_variable = Some(by.into());
        self
    }

    pub fn constraint(mut self, constraint: ConstraintKind) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn knots(mut self, knots: KnotSequence) -> Self {
        self.knots = Some(knots);
        self
    }

    /// Term label, `s(x)` or `s(x):z` for a varying-coefficient term.
    pub fn id(&self) -> String {
        match &self.by_variable {
            Some(by) => format!("s({}):{}", self.covariate, by),
            None => format!("s({})", self.covariate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub response: String,
    pub smooth_terms: Vec<SmoothTerm>,
    pub linear_terms: Vec<String>,
    pub random_intercept: Option<String>,
}

impl ModelFormula {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            smooth_terms: Vec::new(),
            linear_terms: Vec::new(),
            random_intercept: None,
        }
    }

    pub fn smooth(mut self, term: SmoothTerm) -> Self {
        self.smooth_terms.push(term);
        self
    }

    pub fn linear(mut self, column: impl Into<String>) -> Self {
        self.linear_terms.push(column.into());
        self
    }

    pub fn random_intercept(mut self, group: impl Into<String>) -> Self {
        self.random_intercept = Some(group.into());
        self
    }

    pub fn validate(&self) -> Result<(), FormulaError> {
        let mut ids: Vec<String> = self.smooth_terms.iter().map(SmoothTerm::id).collect();
        ids.extend(self.linear_terms.iter().cloned());
        ids.extend(self.random_intercept.iter().map(|g| format!("(1|{g})")));
        let mut sorted = ids.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(FormulaError::DuplicateTerm(w[0].clone()));
        }
        let covariates = self
            .smooth_terms
            .iter()
            .flat_map(|s| std::iter::once(&s.covariate).chain(s.by_variable.as_ref()))
            .chain(&self.linear_terms)
            .chain(&self.random_intercept);
        for c in covariates {
            if *c == self.response {
                return Err(FormulaError::ResponseAsCovariate(c.clone()));
            }
        }
        Ok(())
    }

    /// Every column the formula reads, response first.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec![self.response.clone()];
        for s in &self.smooth_terms {
            cols.push(s.covariate.clone());
            cols.extend(s.by_variable.clone());
        }
        cols.extend(self.linear_terms.iter().cloned());
        cols.extend(self.random_intercept.clone());
        let mut seen = std::collections::HashSet::new();
        cols.retain(|c| seen.insert(c.clone()));
        cols
    }

    pub fn parse(src: &str) -> Result<Self, FormulaError> {
        let tilde = src.find('~').ok_or(FormulaError::Parse {
            column: src.len() + 1,
            message: "expected `~`".into(),
        })?;
        let response = src[..tilde].trim();
        if !is_ident(response) {
            return Err(FormulaError::Parse {
                column: 1,
                message: format!("invalid response name `{response}`"),
            });
        }
        let mut formula = ModelFormula::new(response);
        for (offset, raw) in split_top(src, tilde + 1, '+')? {
            let term = raw.trim();
            let col = offset + (raw.len() - raw.trim_start().len()) + 1;
            if term.is_empty() {
                return Err(FormulaError::Parse {
                    column: col,
                    message: "empty term".into(),
                });
            }
            if let Some(inner) = term.strip_prefix("s(").and_then(|t| t.strip_suffix(')')) {
                formula.smooth_terms.push(parse_smooth(inner, col + 2)?);
            } else if let Some(inner) = term.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
                let (one, group) = inner.split_once('|').ok_or(FormulaError::Parse {
                    column: col,
                    message: "random intercept must be written (1|group)".into(),
                })?;
                let group = group.trim();
                if one.trim() != "1" || !is_ident(group) {
                    return Err(FormulaError::Parse {
                        column: col,
                        message: "random intercept must be written (1|group)".into(),
                    });
                }
                if formula.random_intercept.is_some() {
                    return Err(FormulaError::Parse {
                        column: col,
                        message: "only one random intercept is supported".into(),
                    });
                }
                formula.random_intercept = Some(group.to_string());
            } else if is_ident(term) {
                formula.linear_terms.push(term.to_string());
            } else {
                return Err(FormulaError::Parse {
                    column: col,
                    message: format!("unrecognised term `{term}`"),
                });
            }
        }
        formula.validate()?;
        Ok(formula)
    }
}

impl std::fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut terms: Vec<String> = self
            .smooth_terms
            .iter()
            .map(|s| {
                let mut args = vec![s.covariate.clone()];
                if let Some(by) = &s.by_variable {
                    args.push(format!("by={by}"));
                }
                args.push(format!("k={}", s.basis_dim));
                if let ConstraintKind::Point { at } = s.constraint {
                    args.push(format!("pc={at}"));
                }
                format!("s({})", args.join(", "))
            })
            .collect();
        terms.extend(self.linear_terms.iter().cloned());
        terms.extend(self.random_intercept.iter().map(|g| format!("(1|{g})")));
        if terms.is_empty() {
            terms.push("1".into());
        }
        write!(f, "{} ~ {}", self.response, terms.join(" + "))
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '.')
}

/// Splits `src[start..]` on `sep` outside parentheses, returning each piece
/// with its byte offset in `src`.
fn split_top(src: &str, start: usize, sep: char) -> Result<Vec<(usize, &str)>, FormulaError> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut piece_start = start;
    for (i, c) in src[start..].char_indices() {
        let pos = start + i;
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(FormulaError::Parse {
                        column: pos + 1,
                        message: "unbalanced `)`".into(),
                    });
                }
            }
            c if c == sep && depth == 0 => {
                out.push((piece_start, &src[piece_start..pos]));
                piece_start = pos + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(FormulaError::Parse {
            column: src.len() + 1,
            message: "unbalanced `(`".into(),
        });
    }
    out.push((piece_start, &src[piece_start..]));
    Ok(out)
}

fn parse_smooth(inner: &str, column: usize) -> Result<SmoothTerm, FormulaError> {
    let err = |message: String| FormulaError::Parse { column, message };
    let mut parts = inner.split(',').map(str::trim);
    let covariate = parts.next().unwrap_or_default();
    if !is_ident(covariate) {
        return Err(err(format!("invalid smooth covariate `{covariate}`")));
    }
    let mut term = SmoothTerm::new(covariate, DEFAULT_BASIS_DIM);
    let mut knot_range = None;
    for opt in parts {
        let (key, value) = opt
            .split_once('=')
            .ok_or_else(|| err(format!("smooth option `{opt}` must be key=value")))?;
        let value = value.trim();
        match key.trim() {
            "k" => {
                term.basis_dim = value
                    .parse()
                    .ok()
                    .filter(|&k: &usize| k >= 4)
                    .ok_or_else(|| err(format!("k must be an integer >= 4, got `{value}`")))?;
            }
            "by" if is_ident(value) => term.by_variable = Some(value.to_string()),
            "pc" => {
                let at = value
                    .parse()
                    .map_err(|_| err(format!("pc must be a number, got `{value}`")))?;
                term.constraint = ConstraintKind::Point { at };
            }
            "knots" => {
                let (lo, hi) = value
                    .split_once(':')
                    .and_then(|(a, b)| {
                        Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?))
                    })
                    .ok_or_else(|| err(format!("knots must be lo:hi, got `{value}`")))?;
                knot_range = Some((lo, hi));
            }
            other => return Err(err(format!("unknown smooth option `{other}`"))),
        }
    }
    if let Some((lo, hi)) = knot_range {
        let knots =
            KnotSequence::uniform(lo, hi, term.basis_dim).map_err(|e| err(e.to_string()))?;
        term.knot_rule = PlacementRule::Explicit;
        term.knots = Some(knots);
    }
    Ok(term)
}
