use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    group_effect, ks_uniform, lifespan_trajectory, replication_rng, PowerConfig, SimError,
};
use crate::data::DataTable;
use crate::fit::{fit_gam, term_pvalue, FitError, FitOptions};
use crate::formula::{ModelFormula, SmoothTerm};
use crate::meta::{combine_pvalues, CombineMethod};

pub(crate) const AGE_RANGE: (f64, f64) = (4.0, 94.0);
const INTERACTION: &str = "s(age):group";

/// Data-generating model for the group difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// Both groups follow the same trajectory.
    Null,
    /// Group 1 declines faster in old age.
    Interaction,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Effect::Null => "null",
            Effect::Interaction => "interaction",
        }
    }
}

/// Source of an interaction p-value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "method")]
pub enum PowerTest {
    /// One model fitted to all data.
    Mega,
    /// The first cohort alone.
    Single,
    /// Per-cohort p-values combined with equal weights.
    Combined(CombineMethod),
}

impl PowerTest {
    pub fn all() -> Vec<PowerTest> {
        let mut tests = vec![PowerTest::Mega, PowerTest::Single];
        tests.extend(CombineMethod::ALL.iter().map(|&m| PowerTest::Combined(m)));
        tests
    }
}

impl fmt::Display for PowerTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PowerTest::Mega => f.write_str("mega"),
            PowerTest::Single => f.write_str("single"),
            PowerTest::Combined(m) => f.write_str(m.name()),
        }
    }
}

/// Quantile levels reported for each p-value distribution.
pub const P_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub sigma: f64,
    pub effect: Effect,
    pub test: PowerTest,
    /// Fraction of replications with p < alpha.
    pub rejection_rate: f64,
    /// Kolmogorov-Smirnov distance of the p-values from Uniform(0, 1).
    pub ks: f64,
    /// p-value quantiles at [`P_QUANTILES`].
    pub quantiles: Vec<f64>,
    /// All p-values in replication order.
    pub p_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub config: PowerConfig,
    pub rows: Vec<PowerRow>,
    pub runtime_secs: f64,
}

impl PowerReport {
    pub fn row(&self, sigma: f64, effect: Effect, test: PowerTest) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.effect == effect && r.test == test)
    }
}

fn formula(k: usize) -> ModelFormula {
    ModelFormula::new("y")
        .smooth(SmoothTerm::new("age", k))
        .smooth(SmoothTerm::new("age", k).by("group"))
        .linear("group")
}

fn simulate(cfg: &PowerConfig, sigma: f64, effect: Effect, rng: &mut ChaCha8Rng) -> DataTable {
    let n = cfg.n_total;
    let (lo, hi) = AGE_RANGE;
    let mut age = Vec::with_capacity(n);
    let mut group = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(lo..=hi);
        let g = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let e: f64 = StandardNormal.sample(rng);
        let mut mean = lifespan_trajectory(a);
        if effect == Effect::Interaction {
            mean += g * group_effect(a, cfg.amplitude);
        }
        age.push(a);
        group.push(g);
        y.push(mean + sigma * e);
    }
    DataTable::new()
        .with_numeric("age", age)
        .and_then(|t| t.with_numeric("group", group))
        .and_then(|t| t.with_numeric("y", y))
        .expect("distinct names")
}

fn interaction_p(data: &DataTable, formula: &ModelFormula) -> Result<f64, FitError> {
    let model = fit_gam(data, formula, &FitOptions::default())?;
    term_pvalue(&model, INTERACTION)
}

/// Returns p-values in the order of [`PowerTest::all`].
fn replicate(
    cfg: &PowerConfig,
    sigma: f64,
    effect: Effect,
    cell: usize,
    rep: usize,
    formula: &ModelFormula,
) -> Result<Vec<f64>, SimError> {
    let fit_err = |source| SimError::Fit {
        replication: rep,
        source,
    };
    let mut rng = replication_rng(cfg.seed, cell, rep);
    let data = simulate(cfg, sigma, effect, &mut rng);
    let mut rows: Vec<usize> = (0..cfg.n_total).collect();
    rows.shuffle(&mut rng);
    let size = cfg.n_total / cfg.n_cohorts;
    let cohort_p: Vec<f64> = (0..cfg.n_cohorts)
        .map(|c| {
            let end = if c + 1 == cfg.n_cohorts {
                cfg.n_total
            } else {
                (c + 1) * size
            };
            let mut idx = rows[c * size..end].to_vec();
            idx.sort_unstable();
            interaction_p(&data.take_rows(&idx), formula)
        })
        .collect::<Result<_, _>>()
        .map_err(fit_err)?;
    let mut out = vec![interaction_p(&data, formula).map_err(fit_err)?, cohort_p[0]];
    for &m in CombineMethod::ALL.iter() {
        let p = combine_pvalues(&cohort_p, None, m).map_err(|source| SimError::Meta {
            replication: rep,
            source,
        })?;
        out.push(p);
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    crate::spline::quantile_type7(sorted, q)
}

/// Runs every (sigma, effect) cell with parallel replications and an
/// ordered reduction.
pub fn run_power(cfg: &PowerConfig) -> Result<PowerReport, SimError> {
    cfg.validate()?;
    let start = Instant::now();
    let formula = formula(cfg.basis_dim);
    let tests = PowerTest::all();
    let mut rows = Vec::new();
    for (s, &sigma) in cfg.sigmas.iter().enumerate() {
        for (e, &effect) in cfg.effects.iter().enumerate() {
            let cell = s * cfg.effects.len() + e;
            let reps: Vec<Vec<f64>> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| replicate(cfg, sigma, effect, cell, rep, &formula))
                .collect::<Result<_, _>>()?;
            for (t, &test) in tests.iter().enumerate() {
                let p_values: Vec<f64> = reps.iter().map(|r| r[t]).collect();
                let mut sorted = p_values.clone();
                sorted.sort_by(f64::total_cmp);
                let rejected = p_values.iter().filter(|&&p| p < cfg.alpha).count();
                rows.push(PowerRow {
                    sigma,
                    effect,
                    test,
                    rejection_rate: rejected as f64 / p_values.len() as f64,
                    ks: ks_uniform(&p_values),
                    quantiles: P_QUANTILES.iter().map(|&q| quantile(&sorted, q)).collect(),
                    p_values,
                });
            }
            log::info!(
                "power sigma={sigma} effect={}: {} replications done",
                effect.name(),
                cfg.replications
            );
        }
    }
    Ok(PowerReport {
        config: cfg.clone(),
        rows,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_labels() {
        let names: Vec<String> = PowerTest::all().iter().map(ToString::to_string).collect();
        assert_eq!(names.len(), 8);
        assert_eq!(names[0], "mega");
        assert_eq!(names[1], "single");
        assert!(names.contains(&"stouffer".to_string()));
    }

    #[test]
    fn small_run_is_deterministic() {
        let cfg = PowerConfig {
            replications: 4,
            n_total: 600,
            sigmas: vec![3500.0],
            ..PowerConfig::default()
        };
        let a = run_power(&cfg).unwrap();
        let b = run_power(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        for r in &a.rows {
            assert!((0.0..=1.0).contains(&r.rejection_rate));
            assert!(r.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
