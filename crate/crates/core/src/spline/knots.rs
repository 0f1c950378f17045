use serde::{Deserialize, Serialize};

use super::BasisError;

/// Cubic B-splines have order 4, so `basis_dim - 4` interior knots.
pub(crate) const ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementRule {
    Quantile,
    Uniform,
    Explicit,
}

/// Interior knots plus the boundary interval of a cubic spline.
///
/// The interior knots are strictly increasing and lie strictly inside the
/// boundary. A sequence with no interior knots (basis_dim 4) spans the cubic
/// polynomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotRepr")]
pub struct KnotSequence {
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    placement_rule: PlacementRule,
}

#[derive(Deserialize)]
struct KnotRepr {
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    placement_rule: PlacementRule,
}

impl TryFrom<KnotRepr> for KnotSequence {
    type Error = BasisError;

    fn try_from(r: KnotRepr) -> Result<Self, Self::Error> {
        KnotSequence::new(r.interior_knots, r.boundary, r.placement_rule)
    }
}

impl KnotSequence {
    /// Builds a knot sequence, sorting and removing duplicate interior knots.
    pub fn new(
        mut interior: Vec<f64>,
        boundary: (f64, f64),
        rule: PlacementRule,
    ) -> Result<Self, BasisError> {
        let (lo, hi) = boundary;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(BasisError::InvalidKnots(format!(
                "boundary ({lo}, {hi}) must be finite with low < high"
            )));
        }
        if let Some(i) = interior.iter().position(|k| !k.is_finite()) {
            return Err(BasisError::InvalidKnots(format!(
                "interior knot {i} is not finite"
            )));
        }
        interior.sort_by(f64::total_cmp);
        interior.dedup();
        if let (Some(&first), Some(&last)) = (interior.first(), interior.last()) {
            if first <= lo || last >= hi {
                return Err(BasisError::InvalidKnots(format!(
                    "interior knots [{first}, {last}] must lie strictly inside ({lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            interior_knots: interior,
            boundary,
            placement_rule: rule,
        })
    }

    /// Evenly spaced interior knots for `basis_dim` functions on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, basis_dim: usize) -> Result<Self, BasisError> {
        if basis_dim < ORDER {
            return Err(BasisError::InvalidBasisDim(basis_dim));
        }
        let n_int = basis_dim - ORDER;
        let step = (hi - lo) / (n_int + 1) as f64;
        let interior = (1..=n_int).map(|j| lo + step * j as f64).collect();
        Self::new(interior, (lo, hi), PlacementRule::Uniform)
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn placement_rule(&self) -> PlacementRule {
        self.placement_rule
    }

    /// Number of cubic B-spline functions this sequence supports.
    pub fn basis_dim(&self) -> usize {
        self.interior_knots.len() + ORDER
    }

    /// Full clamped knot vector: each boundary repeated `ORDER` times.
    pub fn clamped(&self) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let mut t = Vec::with_capacity(self.interior_knots.len() + 2 * ORDER);
        t.extend(std::iter::repeat_n(lo, ORDER));
        t.extend_from_slice(&self.interior_knots);
        t.extend(std::iter::repeat_n(hi, ORDER));
        t
    }
}

/// Places knots for a `basis_dim`-function cubic B-spline basis on `x`.
///
/// Boundary knots are `min(x)` and `max(x)`. Quantile knots sit at equally
/// spaced type-7 quantiles of the distinct values of `x`.
pub fn place_knots(
    x: &[f64],
    basis_dim: usize,
    rule: PlacementRule,
) -> Result<KnotSequence, BasisError> {
    if x.is_empty() {
        return Err(BasisError::EmptyInput);
    }
    if basis_dim < ORDER {
        return Err(BasisError::InvalidBasisDim(basis_dim));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(BasisError::NonFiniteInput { index });
    }
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let n_int = basis_dim - ORDER;

    match rule {
        PlacementRule::Quantile => {
            if distinct.len() < basis_dim {
                return Err(BasisError::TooFewDistinctValues {
                    distinct: distinct.len(),
                    required: basis_dim,
                });
            }
            let interior = (1..=n_int)
                .map(|j| quantile_type7(&distinct, j as f64 / (n_int + 1) as f64))
                .collect();
            KnotSequence::new(interior, (lo, hi), PlacementRule::Quantile)
        }
        PlacementRule::Uniform => {
            if distinct.len() < 2 {
                return Err(BasisError::TooFewDistinctValues {
                    distinct: 1,
                    required: 2,
                });
            }
            KnotSequence::uniform(lo, hi, basis_dim)
        }
        PlacementRule::Explicit => Err(BasisError::InvalidKnots(
            "explicit placement needs caller-supplied knots".into(),
        )),
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub(crate) fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_rule_spaces_interior_knots_evenly() {
        let x = [0.0, 0.25, 0.5, 0.75, 1.0];
        let k = place_knots(&x, 6, PlacementRule::Uniform).unwrap();
        assert_eq!(k.boundary(), (0.0, 1.0));
        let int = k.interior_knots();
        assert_eq!(int.len(), 2);
        assert!((int[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((int[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(k.basis_dim(), 6);

        let k4 = place_knots(&x, 4, PlacementRule::Uniform).unwrap();
        assert!(k4.interior_knots().is_empty());
        assert_eq!(k4.basis_dim(), 4);
    }

    #[test]
    fn quantile_knots_of_uniform_draws_match_theoretical_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let k = place_knots(&x, 10, PlacementRule::Quantile).unwrap();
        // Oracle: sort and read off the empirical quantiles directly.
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let mut total_dev = 0.0;
        for (j, knot) in k.interior_knots().iter().enumerate() {
            let p = (j + 1) as f64 / 7.0;
            let pos = p * 999.0;
            let direct = sorted[pos.floor() as usize]
                + (pos - pos.floor())
                    * (sorted[pos.floor() as usize + 1] - sorted[pos.floor() as usize]);
            assert!((knot - direct).abs() < 1e-12);
            total_dev += (knot - p).abs();
        }
        assert!(total_dev / 6.0 < 0.02);
    }

    #[test]
    fn quantile_knots_are_strictly_increasing_with_duplicates() {
        let mut x = vec![1.0, 1.0, 1.0, 1.0];
        x.extend((2..40).map(|v| v as f64));
        x.extend([5.0, 5.0, 5.0, 7.0, 7.0]);
        let k = place_knots(&x, 12, PlacementRule::Quantile).unwrap();
        let t = k.interior_knots();
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t[0] > 1.0 && *t.last().unwrap() < 39.0);
    }

    #[test]
    fn errors_on_bad_input() {
        assert_eq!(
            place_knots(&[], 5, PlacementRule::Quantile),
            Err(BasisError::EmptyInput)
        );
        assert_eq!(
            place_knots(&[1.0, 2.0, 3.0, 1.0], 5, PlacementRule::Quantile),
            Err(BasisError::TooFewDistinctValues {
                distinct: 3,
                required: 5
            })
        );
        assert!(matches!(
            place_knots(&[1.0, f64::NAN], 4, PlacementRule::Uniform),
            Err(BasisError::NonFiniteInput { index: 1 })
        ));
        assert!(KnotSequence::new(vec![0.0], (0.0, 1.0), PlacementRule::Explicit).is_err());
    }

    #[test]
    fn explicit_knots_are_deduplicated() {
        let k =
            KnotSequence::new(vec![0.5, 0.2, 0.5], (0.0, 1.0), PlacementRule::Explicit).unwrap();
        assert_eq!(k.interior_knots(), &[0.2, 0.5]);
        assert_eq!(k.clamped().len(), 10);
    }
}
