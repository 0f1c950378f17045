use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{
    make_true_functions, mean_sd, replication_rng, EstimationConfig, SimError, TrueFunction,
};
use crate::data::DataTable;
use crate::fit::{fit_gam, predict_term_with, FitOptions, PredictOptions, TermPrediction};
use crate::formula::{ModelFormula, SmoothTerm};
use crate::meta::{pool_pointwise, PoolMethod};
use crate::spline::ConstraintKind;

/// How the full dataset is divided into cohorts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Five cohorts of equal size.
    Equal,
    /// Five cohorts in proportion 300 : 500 : 800 : 1000 : 1400.
    Unequal,
    /// As `Unequal`, but the first four cohorts are drawn from half-ranges
    /// of `x2` and `x1`.
    UnequalRange,
    /// No split: all data in one model.
    Mega,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Equal => "equal",
            Scheme::Unequal => "unequal",
            Scheme::UnequalRange => "unequal_range",
            Scheme::Mega => "mega",
        }
    }
}

const UNEQUAL_SIZES: [usize; 5] = [300, 500, 800, 1000, 1400];

fn unequal_sizes(n: usize) -> Vec<usize> {
    let total: usize = UNEQUAL_SIZES.iter().sum();
    let mut sizes: Vec<usize> = UNEQUAL_SIZES[..4]
        .iter()
        .map(|s| (s * n + total / 2) / total)
        .collect();
    let used: usize = sizes.iter().sum();
    sizes.push(n - used);
    sizes
}

/// Splits row indices `0..n` into cohorts. Every row lands in exactly one
/// cohort.
pub fn partition(scheme: Scheme, x1: &[f64], x2: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = x1.len();
    let mut rows: Vec<usize> = (0..n).collect();
    match scheme {
        Scheme::Mega => vec![rows],
        Scheme::Equal | Scheme::Unequal => {
            rows.shuffle(rng);
            let sizes = if scheme == Scheme::Equal {
                let base = n / 5;
                let mut s = vec![base; 5];
                s[4] = n - 4 * base;
                s
            } else {
                unequal_sizes(n)
            };
            let mut out = Vec::new();
            let mut start = 0;
            for s in sizes {
                out.push(rows[start..start + s].to_vec());
                start += s;
            }
            out
        }
        Scheme::UnequalRange => {
            let sizes = unequal_sizes(n);
            type Rule = fn(f64, f64) -> bool;
            let rules: [Rule; 4] = [
                |_, x2| x2 < 0.5,
                |_, x2| x2 >= 0.5,
                |x1, _| x1 < 0.5,
                |x1, _| x1 >= 0.5,
            ];
            let mut remaining = rows;
            let mut out = Vec::new();
            for (rule, size) in rules.iter().zip(&sizes) {
                let (mut eligible, rest): (Vec<usize>, Vec<usize>) =
                    remaining.iter().partition(|&&i| rule(x1[i], x2[i]));
                eligible.shuffle(rng);
                let take = (*size).min(eligible.len());
                out.push(eligible[..take].to_vec());
                remaining = rest;
                remaining.extend_from_slice(&eligible[take..]);
                remaining.sort_unstable();
            }
            out.push(remaining);
            out
        }
    }
}

/// Summary of one (sigma, scheme, term) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub sigma: f64,
    pub scheme: Scheme,
    pub term: String,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub coverage_mean: f64,
    pub coverage_sd: f64,
}

/// Average fitted curve over replications next to the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub sigma: f64,
    pub scheme: Scheme,
    pub term: String,
    pub x: Vec<f64>,
    pub mean_fit: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub config: EstimationConfig,
    pub rows: Vec<EstimationRow>,
    pub curves: Vec<MeanCurve>,
    /// Mean adjusted R² of the joint fit for each sigma, when `mega` ran.
    pub mega_r2_adj: Vec<(f64, f64)>,
    pub runtime_secs: f64,
}

impl EstimationReport {
    pub fn row(&self, sigma: f64, scheme: Scheme, term: &str) -> Option<&EstimationRow> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.scheme == scheme && r.term == term)
    }
}

struct TermOutcome {
    rmse: f64,
    coverage: f64,
    fit: Vec<f64>,
}

struct RepOutcome {
    /// Indexed by scheme, then term.
    schemes: Vec<Vec<TermOutcome>>,
    r2_adj: Option<f64>,
}

pub(crate) const COVARIATES: [&str; 4] = ["x0", "x1", "x2", "x3"];

fn formula(basis_dims: &[usize; 4]) -> ModelFormula {
    let mut f = ModelFormula::new("y");
    for (name, &k) in COVARIATES.iter().zip(basis_dims) {
        f = f.smooth(
            SmoothTerm::new(*name, k).constraint(ConstraintKind::SumToZeroOver {
                low: 0.0,
                high: 1.0,
            }),
        );
    }
    f
}

fn simulate(n: usize, sigma: f64, funcs: &[TrueFunction; 4], rng: &mut ChaCha8Rng) -> DataTable {
    let mut cols: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut mean = 0.0;
        for (col, f) in cols.iter_mut().zip(funcs) {
            let x: f64 = rng.random();
            mean += f.eval(x);
            col.push(x);
        }
        let e: f64 = StandardNormal.sample(rng);
        y.push(mean + sigma * e);
    }
    let mut table = DataTable::new();
    for (name, col) in COVARIATES.iter().zip(cols) {
        table = table.with_numeric(name, col).expect("distinct names");
    }
    table.with_numeric("y", y).expect("distinct names")
}

fn score(fit: &[f64], se: &[f64], truth: &[f64], z: f64) -> TermOutcome {
    let m = truth.len() as f64;
    let rmse = (fit
        .iter()
        .zip(truth)
        .map(|(f, t)| (f - t).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    let covered = fit
        .iter()
        .zip(se)
        .zip(truth)
        .filter(|((f, s), t)| (*f - *t).abs() <= z * *s)
        .count();
    TermOutcome {
        rmse,
        coverage: covered as f64 / m,
        fit: fit.to_vec(),
    }
}

#[allow(clippy::too_many_arguments)]
fn replicate(
    cfg: &EstimationConfig,
    sigma: f64,
    cell: usize,
    rep: usize,
    funcs: &[TrueFunction; 4],
    formula: &ModelFormula,
    grid: &DataTable,
    truth: &[Vec<f64>],
) -> Result<RepOutcome, SimError> {
    let fit_err = |source| SimError::Fit {
        replication: rep,
        source,
    };
    let mut rng = replication_rng(cfg.seed, cell, rep);
    let data = simulate(cfg.n_total, sigma, funcs, &mut rng);
    let z = Normal::standard().inverse_cdf(1.0 - cfg.alpha / 2.0);
    let options = PredictOptions::with_mean_uncertainty();
    let terms: Vec<String> = formula.smooth_terms.iter().map(SmoothTerm::id).collect();
    let (x1, x2) = (data.numeric("x1").unwrap(), data.numeric("x2").unwrap());

    let mut schemes = Vec::new();
    let mut r2_adj = None;
    for &scheme in &cfg.schemes {
        let cohorts = partition(scheme, x1, x2, &mut rng);
        let mut fits = Vec::new();
        for (c, rows) in cohorts.iter().enumerate() {
            let sub = if scheme == Scheme::Mega {
                data.clone()
            } else {
                data.take_rows(rows)
            };
            let model = fit_gam(
                &sub,
                formula,
                &FitOptions::labelled(format!("cohort{}", c + 1)),
            )
            .map_err(fit_err)?;
            if scheme == Scheme::Mega {
                r2_adj = Some(adjusted_r2(&sub, model.scale));
            }
            fits.push(model);
        }
        let mut outcomes = Vec::new();
        for (t, term) in terms.iter().enumerate() {
            let preds: Vec<TermPrediction> = fits
                .iter()
                .map(|m| predict_term_with(m, term, grid, options))
                .collect::<Result<_, _>>()
                .map_err(fit_err)?;
            let outcome = if preds.len() == 1 {
                score(&preds[0].fit, &preds[0].se, &truth[t], z)
            } else {
                let meta =
                    pool_pointwise(&preds, PoolMethod::FixedEffect, false).map_err(|source| {
                        SimError::Meta {
                            replication: rep,
                            source,
                        }
                    })?;
                score(&meta.pooled_fit, &meta.pooled_se, &truth[t], z)
            };
            outcomes.push(outcome);
        }
        schemes.push(outcomes);
    }
    Ok(RepOutcome { schemes, r2_adj })
}

fn adjusted_r2(data: &DataTable, scale: f64) -> f64 {
    let y = data.numeric("y").unwrap();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let total = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.0 - scale / total
}

/// Runs every (sigma, scheme) cell; replications run in parallel and are
/// reduced in index order, so results do not depend on scheduling.
pub fn run_estimation(cfg: &EstimationConfig) -> Result<EstimationReport, SimError> {
    cfg.validate()?;
    let funcs = &make_true_functions();
    let start = Instant::now();
    let formula = formula(&cfg.basis_dims);
    let x: Vec<f64> = (0..cfg.grid_points)
        .map(|i| i as f64 / (cfg.grid_points - 1) as f64)
        .collect();
    let mut grid = DataTable::new();
    for name in COVARIATES {
        grid = grid.with_numeric(name, x.clone()).expect("distinct names");
    }
    let truth: Vec<Vec<f64>> = funcs
        .iter()
        .map(|f| x.iter().map(|&v| f.eval(v)).collect())
        .collect();

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut mega_r2_adj = Vec::new();
    for (cell, &sigma) in cfg.sigmas.iter().enumerate() {
        let outcomes: Vec<RepOutcome> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| replicate(cfg, sigma, cell, rep, funcs, &formula, &grid, &truth))
            .collect::<Result<_, _>>()?;
        for (s, &scheme) in cfg.schemes.iter().enumerate() {
            for (t, f) in funcs.iter().enumerate() {
                let cells: Vec<&TermOutcome> = outcomes.iter().map(|o| &o.schemes[s][t]).collect();
                let (rmse_mean, rmse_sd) =
                    mean_sd(&cells.iter().map(|c| c.rmse).collect::<Vec<_>>());
                let (coverage_mean, coverage_sd) =
                    mean_sd(&cells.iter().map(|c| c.coverage).collect::<Vec<_>>());
                rows.push(EstimationRow {
                    sigma,
                    scheme,
                    term: f.name.to_string(),
                    rmse_mean,
                    rmse_sd,
                    coverage_mean,
                    coverage_sd,
                });
                let mut mean_fit = vec![0.0; x.len()];
                for c in &cells {
                    for (m, v) in mean_fit.iter_mut().zip(&c.fit) {
                        *m += v;
                    }
                }
                let reps = cells.len() as f64;
                curves.push(MeanCurve {
                    sigma,
                    scheme,
                    term: f.name.to_string(),
                    x: x.clone(),
                    mean_fit: mean_fit.into_iter().map(|v| v / reps).collect(),
                    truth: truth[t].clone(),
                });
            }
        }
        let r2: Vec<f64> = outcomes.iter().filter_map(|o| o.r2_adj).collect();
        if !r2.is_empty() {
            mega_r2_adj.push((sigma, mean_sd(&r2).0));
        }
        log::info!(
            "estimation sigma={sigma}: {} replications done",
            cfg.replications
        );
    }
    Ok(EstimationReport {
        config: cfg.clone(),
        rows,
        curves,
        mega_r2_adj,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn covariates(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            (0..n).map(|_| rng.random()).collect(),
            (0..n).map(|_| rng.random()).collect(),
        )
    }

    fn check_partition(parts: &[Vec<usize>], n: usize) {
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn schemes_partition_exactly() {
        let (x1, x2) = covariates(4000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scheme in [
            Scheme::Equal,
            Scheme::Unequal,
            Scheme::UnequalRange,
            Scheme::Mega,
        ] {
            let parts = partition(scheme, &x1, &x2, &mut rng);
            check_partition(&parts, 4000);
            let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
            match scheme {
                Scheme::Equal => assert_eq!(sizes, vec![800; 5]),
                Scheme::Unequal | Scheme::UnequalRange => {
                    assert_eq!(sizes, vec![300, 500, 800, 1000, 1400])
                }
                Scheme::Mega => assert_eq!(sizes, vec![4000]),
            }
        }
    }

    #[test]
    fn range_scheme_respects_half_ranges() {
        let (x1, x2) = covariates(4000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let parts = partition(Scheme::UnequalRange, &x1, &x2, &mut rng);
        assert!(parts[0].iter().all(|&i| x2[i] < 0.5));
        assert!(parts[1].iter().all(|&i| x2[i] >= 0.5));
        assert!(parts[2].iter().all(|&i| x1[i] < 0.5));
        assert!(parts[3].iter().all(|&i| x1[i] >= 0.5));
    }

    #[test]
    fn unequal_sizes_scale_with_n() {
        assert_eq!(unequal_sizes(4000), vec![300, 500, 800, 1000, 1400]);
        let s = unequal_sizes(1000);
        assert_eq!(s.iter().sum::<usize>(), 1000);
        assert_eq!(s[0], 75);
    }
}
