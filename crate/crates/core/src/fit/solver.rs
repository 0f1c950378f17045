use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::Penalty;
use super::FitError;
use crate::linalg::sorted_eigen;

/// Candidate smoothing parameters searched by GCV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub sweeps: usize,
}

impl LambdaGrid {
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Self {
        assert!(lo > 0.0 && hi > lo && count >= 2, "invalid lambda grid");
        let (a, b) = (lo.ln(), hi.ln());
        let values = (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect();
        LambdaGrid { values, sweeps: 2 }
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::log_spaced(1e-6, 1e6, 30)
    }
}

/// Penalized least squares with cached cross-products, so each candidate
/// smoothing parameter costs one `p × p` factorization.
///
/// Each penalized block is rotated to the eigenbasis of its penalty, making
/// every penalty diagonal; the system is then equilibrated before
/// factorization so very large smoothing parameters stay well conditioned.
pub(crate) struct PenalizedLs {
    /// Block-diagonal orthogonal rotation to penalty eigenbases.
    rotation: DMatrix<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    tss: f64,
    n: usize,
    /// Penalty eigenvalues per block, in rotated coordinates.
    penalties: Vec<(usize, Vec<f64>)>,
}

pub(crate) struct Solution {
    pub beta: DVector<f64>,
    pub a_inv: DMatrix<f64>,
    /// Diagonal of the influence matrix in rotated coordinates; only sums
    /// over whole term blocks are meaningful.
    pub edf_diag: Vec<f64>,
    pub edf: f64,
    pub rss: f64,
}

struct Factored {
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    edf_diag: Vec<f64>,
    edf: f64,
    rss: f64,
}

impl PenalizedLs {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, penalties: &[Penalty]) -> Self {
        let n = y.len();
        let p = x.ncols();
        let mean = y.mean();
        let mut rotation = DMatrix::identity(p, p);
        let mut diag = Vec::new();
        for pen in penalties {
            let (mut values, vectors) = sorted_eigen(&pen.matrix);
            let max = values.first().copied().unwrap_or(0.0);
            for v in &mut values {
                if *v <= 1e-9 * max {
                    *v = 0.0;
                }
            }
            let k = pen.matrix.nrows();
            rotation
                .view_mut((pen.start, pen.start), (k, k))
                .copy_from(&vectors);
            diag.push((pen.start, values));
        }
        let xr = x * &rotation;
        PenalizedLs {
            gram: xr.tr_mul(&xr),
            xty: xr.tr_mul(y),
            rotation,
            yty: y.dot(y),
            tss: y.iter().map(|v| (v - mean).powi(2)).sum(),
            n,
            penalties: diag,
        }
    }

    pub fn n_penalties(&self) -> usize {
        self.penalties.len()
    }

    fn factor(&self, lambdas: &[f64]) -> Result<Factored, FitError> {
        let mut a = self.gram.clone();
        for ((start, d), &l) in self.penalties.iter().zip(lambdas) {
            for (i, v) in d.iter().enumerate() {
                a[(start + i, start + i)] += l * v;
            }
        }
        let scale: DVector<f64> = a.diagonal().map(|v| v.sqrt().recip());
        let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * scale[i] * scale[j]);
        let chol = scaled
            .cholesky()
            .ok_or_else(|| FitError::RankDeficientDesign {
                term: "(model)".into(),
                detail: "penalized normal equations are not positive definite".into(),
            })?;
        let beta = chol
            .solve(&self.xty.component_mul(&scale))
            .component_mul(&scale);
        let inv = chol.inverse();
        let a_inv = DMatrix::from_fn(inv.nrows(), inv.ncols(), |i, j| {
            inv[(i, j)] * scale[i] * scale[j]
        });
        let edf_diag: Vec<f64> = (0..a_inv.nrows())
            .map(|i| a_inv.row(i).dot(&self.gram.row(i)))
            .collect();
        let edf = edf_diag.iter().sum();
        let rss = self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.gram * &beta));
        // Cancellation makes tiny residual sums noisy; clamp them at a
        // relative floor so exact fits compare as ties.
        let rss = rss.max(1e-12 * self.tss).max(f64::MIN_POSITIVE);
        Ok(Factored {
            beta,
            a_inv,
            edf_diag,
            edf,
            rss,
        })
    }

    pub fn solve(&self, lambdas: &[f64]) -> Result<Solution, FitError> {
        let f = self.factor(lambdas)?;
        let q = &self.rotation;
        Ok(Solution {
            beta: q * f.beta,
            a_inv: q * f.a_inv * q.transpose(),
            edf_diag: f.edf_diag,
            edf: f.edf,
            rss: f.rss,
        })
    }

    pub fn gcv(&self, lambdas: &[f64]) -> Result<f64, FitError> {
        let f = self.factor(lambdas)?;
        Ok(gcv_score(self.n, f.rss, f.edf))
    }
}

pub(crate) fn gcv_score(n: usize, rss: f64, edf: f64) -> f64 {
    let n = n as f64;
    let denom = n - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n * rss / (denom * denom)
    }
}

/// Result of the smoothing-parameter search.
#[derive(Clone, Debug, PartialEq)]
pub struct GcvSelection {
    pub lambdas: Vec<f64>,
    pub score: f64,
    /// Every (lambdas, score) pair evaluated during the search.
    pub evaluations: Vec<(Vec<f64>, f64)>,
}

/// Coordinate-wise grid search over one smoothing parameter per penalty.
/// Ties go to the larger value.
pub(crate) fn select_lambda(
    problem: &PenalizedLs,
    grid: &LambdaGrid,
) -> Result<GcvSelection, FitError> {
    let m = problem.n_penalties();
    let start = grid.values[grid.values.len() / 2];
    let mut current = vec![start; m];
    let mut best = problem.gcv(&current)?;
    let mut evaluations = vec![(current.clone(), best)];
    if m == 0 {
        return Ok(GcvSelection {
            lambdas: current,
            score: best,
            evaluations,
        });
    }
    for _ in 0..grid.sweeps.max(1) {
        for j in 0..m {
            let mut best_value = current[j];
            let current_score = best;
            for &v in &grid.values {
                let mut trial = current.clone();
                trial[j] = v;
                let score = if v == current[j] {
                    current_score
                } else {
                    problem.gcv(&trial)?
                };
                if v != current[j] {
                    evaluations.push((trial, score));
                }
                if score < best || (score == best && v > best_value) {
                    best = score;
                    best_value = v;
                }
            }
            current[j] = best_value;
        }
    }
    Ok(GcvSelection {
        lambdas: current,
        score: best,
        evaluations,
    })
}
