use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Effect, Scheme, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub replications: usize,
    pub n_total: usize,
    pub sigmas: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Basis dimensions of the four smooth terms.
    pub basis_dims: [usize; 4],
    pub grid_points: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            replications: 200,
            n_total: 4000,
            sigmas: vec![1.0, 1.6],
            schemes: vec![
                Scheme::Equal,
                Scheme::Unequal,
                Scheme::UnequalRange,
                Scheme::Mega,
            ],
            basis_dims: [20, 10, 30, 5],
            grid_points: 201,
            alpha: 0.05,
            seed: 20_200_101,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("estimation: {m}")));
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if self.n_total < 100 {
            return bad("n_total must be at least 100");
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigmas must be finite and non-negative");
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required");
        }
        if self.basis_dims.iter().any(|&k| k < 4) {
            return bad("basis dimensions must be at least 4");
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub replications: usize,
    pub n_total: usize,
    /// Residual standard deviations; more than one traces a power curve.
    pub sigmas: Vec<f64>,
    pub effects: Vec<Effect>,
    pub n_cohorts: usize,
    /// Group difference at age 94 under the interaction effect.
    pub amplitude: f64,
    pub basis_dim: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            replications: 500,
            n_total: 3000,
            sigmas: vec![3500.0],
            effects: vec![Effect::Null, Effect::Interaction],
            n_cohorts: 6,
            amplitude: 2000.0,
            basis_dim: 10,
            alpha: 0.05,
            seed: 20_200_102,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("power: {m}")));
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if self.n_cohorts < 2 {
            return bad("n_cohorts must be at least 2");
        }
        if self.n_total / self.n_cohorts < 30 {
            return bad("each cohort needs at least 30 observations");
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("sigmas must be finite and positive");
        }
        if self.effects.is_empty() {
            return bad("at least one effect is required");
        }
        if self.basis_dim < 4 {
            return bad("basis_dim must be at least 4");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Experiment file; either section may be omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub estimation: Option<EstimationConfig>,
    pub power: Option<PowerConfig>,
}

impl SimConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let config: SimConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.estimation.is_none() && self.power.is_none() {
            return Err(SimError::Config(
                "config defines neither [estimation] nor [power]".into(),
            ));
        }
        if let Some(e) = &self.estimation {
            e.validate()?;
        }
        if let Some(p) = &self.power {
            p.validate()?;
        }
        Ok(())
    }
}
