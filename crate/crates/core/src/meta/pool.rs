use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MetaError;
use crate::data::DataTable;
use crate::fit::TermPrediction;

/// Estimator of the between-cohort variance at one grid point.
pub trait BetweenStudyVariance: Sync {
    fn tau2(&self, fit: &[f64], variance: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FixedEffect;

impl BetweenStudyVariance for FixedEffect {
    fn tau2(&self, _fit: &[f64], _variance: &[f64]) -> f64 {
        0.0
    }
}

/// Moment estimator `max(0, (Q - (M - 1)) / C)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DerSimonianLaird;

impl BetweenStudyVariance for DerSimonianLaird {
    fn tau2(&self, fit: &[f64], variance: &[f64]) -> f64 {
        let w: Vec<f64> = variance.iter().map(|v| 1.0 / v).collect();
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|x| x * x).sum();
        let q = q_statistic(fit, &w);
        let c = sw - sw2 / sw;
        if c <= 0.0 {
            return 0.0;
        }
        ((q - (fit.len() as f64 - 1.0)) / c).max(0.0)
    }
}

fn q_statistic(fit: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mean = fit.iter().zip(w).map(|(f, w)| f * w).sum::<f64>() / sw;
    fit.iter().zip(w).map(|(f, w)| w * (f - mean).powi(2)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMethod {
    #[serde(rename = "fe")]
    FixedEffect,
    #[serde(rename = "dl")]
    DerSimonianLaird,
}

impl PoolMethod {
    pub fn estimator(self) -> &'static dyn BetweenStudyVariance {
        match self {
            PoolMethod::FixedEffect => &FixedEffect,
            PoolMethod::DerSimonianLaird => &DerSimonianLaird,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolMethod::FixedEffect => "fe",
            PoolMethod::DerSimonianLaird => "dl",
        }
    }
}

impl std::str::FromStr for PoolMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fe" | "fixed" => Ok(PoolMethod::FixedEffect),
            "dl" | "random" => Ok(PoolMethod::DerSimonianLaird),
            other => Err(format!(
                "unknown pooling method `{other}` (expected fe or dl)"
            )),
        }
    }
}

/// One cohort's contribution along the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortCurve {
    pub label: String,
    pub n: usize,
    pub fit: Vec<f64>,
    pub variance: Vec<f64>,
    /// Normalized pooling weight; 0 where the cohort is excluded.
    pub weight: Vec<f64>,
    pub in_range: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaFit {
    pub grid: DataTable,
    pub term: String,
    pub includes_intercept: bool,
    pub method: PoolMethod,
    /// NaN where fewer than two cohorts contribute.
    pub pooled_fit: Vec<f64>,
    pub pooled_se: Vec<f64>,
    pub tau2: Vec<f64>,
    pub per_cohort: Vec<CohortCurve>,
}

impl MetaFit {
    pub fn len(&self) -> usize {
        self.pooled_fit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled_fit.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityCurve {
    pub grid: DataTable,
    pub q: Vec<f64>,
    /// Number of contributing cohorts minus one at each point.
    pub df: Vec<usize>,
    /// Normal-approximation interval for `Q - df` with variance `2 df`.
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceCurve {
    pub grid: DataTable,
    pub labels: Vec<String>,
    /// `fractions[m][i]`: share of cohort `m` in the pooled estimate at point `i`.
    pub fractions: Vec<Vec<f64>>,
}

fn check_inputs(predictions: &[TermPrediction]) -> Result<(), MetaError> {
    if predictions.len() < 2 {
        return Err(MetaError::TooFewCohorts(predictions.len()));
    }
    let first = &predictions[0];
    for p in &predictions[1..] {
        if p.grid != first.grid || p.fit.len() != first.fit.len() {
            return Err(MetaError::GridMismatch(p.label.clone()));
        }
        if p.term != first.term {
            return Err(MetaError::InconsistentPredictions {
                label: p.label.clone(),
                detail: format!("term `{}` vs `{}`", p.term, first.term),
            });
        }
        if p.includes_intercept != first.includes_intercept {
            return Err(MetaError::InconsistentPredictions {
                label: p.label.clone(),
                detail: "intercept inclusion differs".into(),
            });
        }
    }
    Ok(())
}

/// Cohorts usable at grid point `i`.
fn contributors(predictions: &[TermPrediction], i: usize, range_restrict: bool) -> Vec<usize> {
    predictions
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let se = p.se[i];
            let usable = se.is_finite() && se > 0.0 && p.fit[i].is_finite();
            if !usable {
                log::warn!(
                    "cohort `{}` has degenerate se {se} at grid point {i}; dropped there",
                    p.label
                );
            }
            usable && (!range_restrict || p.in_range[i])
        })
        .map(|(m, _)| m)
        .collect()
}

struct PointResult {
    fit: f64,
    se: f64,
    tau2: f64,
    weights: Vec<f64>,
}

pub fn pool_pointwise(
    predictions: &[TermPrediction],
    method: PoolMethod,
    range_restrict: bool,
) -> Result<MetaFit, MetaError> {
    let mut meta = pool_pointwise_with(predictions, method.estimator(), range_restrict)?;
    meta.method = method;
    Ok(meta)
}

/// Pools with an arbitrary between-cohort variance estimator.
pub fn pool_pointwise_with(
    predictions: &[TermPrediction],
    estimator: &dyn BetweenStudyVariance,
    range_restrict: bool,
) -> Result<MetaFit, MetaError> {
    check_inputs(predictions)?;
    let m = predictions.len();
    let n_points = predictions[0].fit.len();
    let points: Vec<PointResult> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let idx = contributors(predictions, i, range_restrict);
            let mut weights = vec![0.0; m];
            if idx.len() < 2 {
                return PointResult {
                    fit: f64::NAN,
                    se: f64::NAN,
                    tau2: f64::NAN,
                    weights,
                };
            }
            let fit: Vec<f64> = idx.iter().map(|&k| predictions[k].fit[i]).collect();
            let var: Vec<f64> = idx.iter().map(|&k| predictions[k].se[i].powi(2)).collect();
            let tau2 = estimator.tau2(&fit, &var);
            let w: Vec<f64> = var.iter().map(|v| 1.0 / (v + tau2)).collect();
            let sw: f64 = w.iter().sum();
            let pooled = fit.iter().zip(&w).map(|(f, w)| f * w).sum::<f64>() / sw;
            for (&k, wk) in idx.iter().zip(&w) {
                weights[k] = wk / sw;
            }
            PointResult {
                fit: pooled,
                se: sw.sqrt().recip(),
                tau2,
                weights,
            }
        })
        .collect();

    let per_cohort = predictions
        .iter()
        .enumerate()
        .map(|(k, p)| CohortCurve {
            label: p.label.clone(),
            n: p.n,
            fit: p.fit.clone(),
            variance: p.se.iter().map(|s| s * s).collect(),
            weight: points.iter().map(|r| r.weights[k]).collect(),
            in_range: p.in_range.clone(),
        })
        .collect();

    Ok(MetaFit {
        grid: predictions[0].grid.clone(),
        term: predictions[0].term.clone(),
        includes_intercept: predictions[0].includes_intercept,
        method: PoolMethod::FixedEffect,
        pooled_fit: points.iter().map(|r| r.fit).collect(),
        pooled_se: points.iter().map(|r| r.se).collect(),
        tau2: points.iter().map(|r| r.tau2).collect(),
        per_cohort,
    })
}

/// Pointwise `(1 - alpha)` normal band.
pub fn confidence_band(meta: &MetaFit, alpha: f64) -> Result<(Vec<f64>, Vec<f64>), MetaError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetaError::BadAlpha(alpha));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let low = meta
        .pooled_fit
        .iter()
        .zip(&meta.pooled_se)
        .map(|(f, s)| f - z * s)
        .collect();
    let high = meta
        .pooled_fit
        .iter()
        .zip(&meta.pooled_se)
        .map(|(f, s)| f + z * s)
        .collect();
    Ok((low, high))
}

/// Cochran's Q along the grid with a 95% interval for its excess over df.
pub fn cochran_q(
    predictions: &[TermPrediction],
    range_restrict: bool,
) -> Result<HeterogeneityCurve, MetaError> {
    check_inputs(predictions)?;
    let n_points = predictions[0].fit.len();
    let z = Normal::standard().inverse_cdf(0.975);
    let rows: Vec<(f64, usize)> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let idx = contributors(predictions, i, range_restrict);
            if idx.len() < 2 {
                return (f64::NAN, idx.len().saturating_sub(1));
            }
            let fit: Vec<f64> = idx.iter().map(|&k| predictions[k].fit[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&k| predictions[k].se[i].powi(-2)).collect();
            (q_statistic(&fit, &w), idx.len() - 1)
        })
        .collect();
    let q: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let df: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let half = |d: usize| z * (2.0 * d as f64).sqrt();
    Ok(HeterogeneityCurve {
        grid: predictions[0].grid.clone(),
        ci_low: q
            .iter()
            .zip(&df)
            .map(|(q, &d)| q - d as f64 - half(d))
            .collect(),
        ci_high: q
            .iter()
            .zip(&df)
            .map(|(q, &d)| q - d as f64 + half(d))
            .collect(),
        q,
        df,
    })
}

/// Each cohort's share of the pooled estimate at every grid point.
pub fn dominance(meta: &MetaFit) -> DominanceCurve {
    DominanceCurve {
        grid: meta.grid.clone(),
        labels: meta.per_cohort.iter().map(|c| c.label.clone()).collect(),
        fractions: meta.per_cohort.iter().map(|c| c.weight.clone()).collect(),
    }
}
