use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use super::MetaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMethod {
    Stouffer,
    Tippett,
    Fisher,
    Edgington,
    WilkinsonMax,
    Logitp,
}

impl CombineMethod {
    pub const ALL: [CombineMethod; 6] = [
        CombineMethod::Stouffer,
        CombineMethod::Tippett,
        CombineMethod::Fisher,
        CombineMethod::Edgington,
        CombineMethod::WilkinsonMax,
        CombineMethod::Logitp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CombineMethod::Stouffer => "stouffer",
            CombineMethod::Tippett => "tippett",
            CombineMethod::Fisher => "fisher",
            CombineMethod::Edgington => "edgington",
            CombineMethod::WilkinsonMax => "wilkinson_max",
            CombineMethod::Logitp => "logitp",
        }
    }
}

impl std::str::FromStr for CombineMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CombineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown combination method `{s}`"))
    }
}

/// Largest p-value used where a transform diverges at 1.
const P_MAX: f64 = 1.0 - f64::EPSILON;

/// Combines independent p-values into one. `weights` only affect Stouffer's
/// method and default to equal weights.
pub fn combine_pvalues(
    p: &[f64],
    weights: Option<&[f64]>,
    method: CombineMethod,
) -> Result<f64, MetaError> {
    for (index, &value) in p.iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            return Err(MetaError::OutOfRangeP { index, value });
        }
    }
    let m = p.len();
    if m == 0 {
        return Err(MetaError::TooFewCohorts(0));
    }
    let mf = m as f64;
    let combined = match method {
        CombineMethod::Stouffer => {
            let w = match weights {
                Some(w) => {
                    if w.len() != m {
                        return Err(MetaError::WeightCount {
                            expected: m,
                            found: w.len(),
                        });
                    }
                    if let Some(index) = w.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                        return Err(MetaError::BadWeight {
                            index,
                            value: w[index],
                        });
                    }
                    w.to_vec()
                }
                None => vec![1.0; m],
            };
            let normal = Normal::standard();
            let z: f64 = p
                .iter()
                .zip(&w)
                .map(|(&pi, wi)| wi * -normal.inverse_cdf(pi.min(P_MAX)))
                .sum::<f64>()
                / w.iter().map(|x| x * x).sum::<f64>().sqrt();
            normal.sf(z)
        }
        CombineMethod::Tippett => {
            let min = p.iter().copied().fold(f64::INFINITY, f64::min);
            -(mf * (-min).ln_1p()).exp_m1()
        }
        CombineMethod::Fisher => {
            let stat: f64 = -2.0 * p.iter().map(|x| x.ln()).sum::<f64>();
            ChiSquared::new(2.0 * mf).expect("positive df").sf(stat)
        }
        CombineMethod::Edgington => edgington(p.iter().sum(), m),
        CombineMethod::WilkinsonMax => {
            let max = p.iter().copied().fold(0.0, f64::max);
            max.powi(m as i32)
        }
        CombineMethod::Logitp => {
            let sum: f64 = p
                .iter()
                .map(|&x| {
                    let x = x.min(P_MAX);
                    (x / (1.0 - x)).ln()
                })
                .sum();
            let scale = (3.0 * (5.0 * mf + 4.0) / (PI * PI * mf * (5.0 * mf + 2.0))).sqrt();
            StudentsT::new(0.0, 1.0, 5.0 * mf + 4.0)
                .expect("positive df")
                .sf(-sum * scale)
        }
    };
    Ok(combined.clamp(0.0, 1.0))
}

/// `P(U_1 + ... + U_m <= s)` for independent uniforms.
fn edgington(s: f64, m: usize) -> f64 {
    if m > 12 {
        let mf = m as f64;
        return Normal::new(mf / 2.0, (mf / 12.0).sqrt())
            .expect("positive sd")
            .cdf(s);
    }
    if s <= 0.0 {
        return 0.0;
    }
    if s >= m as f64 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut binom = 1.0;
    let mut factorial = 1.0;
    for i in 1..=m {
        factorial *= i as f64;
    }
    for k in 0..=(s.floor() as usize) {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * binom * (s - k as f64).powi(m as i32);
        binom = binom * (m - k) as f64 / (k + 1) as f64;
    }
    (total / factorial).clamp(0.0, 1.0)
}
