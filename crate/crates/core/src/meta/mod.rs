//! Pointwise meta-analysis of per-cohort term curves.

mod combine;
mod pool;

use thiserror::Error;

pub use combine::{combine_pvalues, CombineMethod};
pub use pool::{
    cochran_q, confidence_band, dominance, pool_pointwise, pool_pointwise_with,
    BetweenStudyVariance, CohortCurve, DerSimonianLaird, DominanceCurve, FixedEffect,
    HeterogeneityCurve, MetaFit, PoolMethod,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("cohort `{0}` was predicted on a different grid")]
    GridMismatch(String),
    #[error("cohort `{label}` does not match the first cohort: {detail}")]
    InconsistentPredictions { label: String, detail: String },
    #[error("meta-analysis needs at least 2 cohorts, got {0}")]
    TooFewCohorts(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("p-value {value} at position {index} is outside (0, 1]")]
    OutOfRangeP { index: usize, value: f64 },
    #[error("expected {expected} weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("weight {value} at position {index} is not positive and finite")]
    BadWeight { index: usize, value: f64 },
}
