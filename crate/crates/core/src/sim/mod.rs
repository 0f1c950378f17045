//! Monte Carlo experiments comparing pooled per-cohort fits with a joint
//! fit of all data: curve estimation accuracy and coverage, and null
//! calibration and power of combined p-values for a smooth interaction.

mod config;
mod estimation;
mod functions;
mod power;
mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{EstimationConfig, PowerConfig, SimConfig};
pub use estimation::{
    partition, run_estimation, EstimationReport, EstimationRow, MeanCurve, Scheme,
};
pub use functions::{group_effect, lifespan_trajectory, make_true_functions, TrueFunction};
pub use power::{run_power, Effect, PowerReport, PowerRow, PowerTest};
pub use report::write_reports;

use crate::fit::FitError;
use crate::meta::MetaError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("replication {replication}: {source}")]
    Fit {
        replication: usize,
        #[source]
        source: FitError,
    },
    #[error("replication {replication}: {source}")]
    Meta {
        replication: usize,
        #[source]
        source: MetaError,
    },
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn replication(&self) -> Option<usize> {
        match self {
            SimError::Fit { replication, .. } | SimError::Meta { replication, .. } => {
                Some(*replication)
            }
            _ => None,
        }
    }
}

/// Independent generator for one replication of one experiment cell.
pub(crate) fn replication_rng(seed: u64, cell: usize, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | replication as u64);
    rng
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
