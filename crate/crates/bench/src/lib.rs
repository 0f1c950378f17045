//! Benchmark fixtures.

use metagam_core::{DataTable, ModelFormula};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FORMULA: &str = "y ~ s(x, k=20)";

/// One cohort with `y = sin(2πx) + shift + noise`, `x` uniform on `[lo, hi)`.
pub fn cohort(n: usize, lo: f64, hi: f64, shift: f64, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let y = x
        .iter()
        .map(|&v| (std::f64::consts::TAU * v).sin() + shift + 0.3 * (rng.random::<f64>() - 0.5))
        .collect();
    DataTable::new()
        .with_numeric("x", x)
        .and_then(|t| t.with_numeric("y", y))
        .expect("fixture columns")
}

pub fn formula() -> ModelFormula {
    ModelFormula::parse(FORMULA).expect("fixture formula")
}

/// Evenly spaced points on `[0, 1]`.
pub fn unit_grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}
