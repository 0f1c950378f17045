use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BasisError, CubicBSpline, KnotSequence};

/// Identifiability constraint as requested in a model formula, before it has
/// been tied to data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Smooth sums to zero over the observed covariate values.
    SumToZero,
    /// Smooth integrates to zero over a fixed interval.
    SumToZeroOver {
        low: f64,
        high: f64,
    },
    /// Smooth is exactly zero at `at`.
    Point {
        at: f64,
    },
    None,
}

/// Resolved linear constraint `cᵀγ = 0` on the unconstrained coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// `direction` is the averaged unconstrained basis over the constraint
    /// set (data points or an interval).
    SumToZero {
        direction: Vec<f64>,
    },
    Point {
        at: f64,
    },
    None,
}

impl ConstraintKind {
    pub fn resolve(&self, knots: &KnotSequence, data: &[f64]) -> Result<Constraint, BasisError> {
        let basis = CubicBSpline::new(knots);
        match *self {
            ConstraintKind::SumToZero => {
                if data.is_empty() {
                    return Err(BasisError::EmptyInput);
                }
                let b = basis.design(data);
                let n = data.len() as f64;
                let direction = b.row_sum().iter().map(|v| v / n).collect();
                Ok(Constraint::SumToZero { direction })
            }
            ConstraintKind::SumToZeroOver { low, high } => {
                if low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) {
                    return Err(BasisError::InvalidConstraint(format!(
                        "empty interval [{low}, {high}]"
                    )));
                }
                let width = high - low;
                let direction = basis
                    .integrals(low, high)
                    .into_iter()
                    .map(|v| v / width)
                    .collect();
                Ok(Constraint::SumToZero { direction })
            }
            ConstraintKind::Point { at } => {
                if !at.is_finite() {
                    return Err(BasisError::InvalidConstraint("point is not finite".into()));
                }
                Ok(Constraint::Point { at })
            }
            ConstraintKind::None => Ok(Constraint::None),
        }
    }
}

/// A fully resolved smooth term: covariate, knots and constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SmoothRepr")]
pub struct SmoothSpec {
    pub id: String,
    pub covariate: String,
    pub basis_dim: usize,
    pub knots: KnotSequence,
    pub constraint: Constraint,
    /// Numeric column multiplying the smooth (varying-coefficient term).
    pub by_variable: Option<String>,
}

#[derive(Deserialize)]
struct SmoothRepr {
    id: String,
    covariate: String,
    basis_dim: usize,
    knots: KnotSequence,
    constraint: Constraint,
    by_variable: Option<String>,
}

impl TryFrom<SmoothRepr> for SmoothSpec {
    type Error = BasisError;

    fn try_from(r: SmoothRepr) -> Result<Self, Self::Error> {
        let spec = SmoothSpec {
            id: r.id,
            covariate: r.covariate,
            basis_dim: r.basis_dim,
            knots: r.knots,
            constraint: r.constraint,
            by_variable: r.by_variable,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SmoothSpec {
    pub fn new(
        id: impl Into<String>,
        covariate: impl Into<String>,
        knots: KnotSequence,
        constraint: Constraint,
        by_variable: Option<String>,
    ) -> Result<Self, BasisError> {
        let spec = SmoothSpec {
            id: id.into(),
            covariate: covariate.into(),
            basis_dim: knots.basis_dim(),
            knots,
            constraint,
            by_variable,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BasisError> {
        if self.basis_dim < 4 {
            return Err(BasisError::InvalidBasisDim(self.basis_dim));
        }
        if self.basis_dim != self.knots.basis_dim() {
            return Err(BasisError::InvalidKnots(format!(
                "basis_dim {} but knots support {} functions",
                self.basis_dim,
                self.knots.basis_dim()
            )));
        }
        match &self.constraint {
            Constraint::SumToZero { direction } => {
                if direction.len() != self.basis_dim {
                    return Err(BasisError::LengthMismatch {
                        expected: self.basis_dim,
                        found: direction.len(),
                    });
                }
                let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(BasisError::InvalidConstraint(
                        "sum-to-zero direction is zero or non-finite".into(),
                    ));
                }
            }
            Constraint::Point { at } if !at.is_finite() => {
                return Err(BasisError::InvalidConstraint("point is not finite".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn basis(&self) -> CubicBSpline {
        CubicBSpline::new(&self.knots)
    }

    /// Number of coefficients after the constraint is absorbed.
    pub fn n_coefficients(&self) -> usize {
        match self.constraint {
            Constraint::None => self.basis_dim,
            _ => self.basis_dim - 1,
        }
    }

    /// Matrix `Z` with orthonormal columns spanning the null space of the
    /// constraint row; `γ = Z θ` maps constrained to unconstrained weights.
    pub fn constraint_transform(&self) -> DMatrix<f64> {
        let k = self.basis_dim;
        let c = match &self.constraint {
            Constraint::None => return DMatrix::identity(k, k),
            Constraint::SumToZero { direction } => DVector::from_column_slice(direction),
            Constraint::Point { at } => DVector::from_vec(self.basis().row(*at, 0)),
        };
        householder_complement(&c)
    }

    /// Constrained basis evaluated at `x` (no `by` scaling).
    pub fn constrained_design(&self, x: &[f64]) -> DMatrix<f64> {
        self.basis().design(x) * self.constraint_transform()
    }
}

/// Orthonormal basis of the complement of `c`: the last `k - 1` columns of
/// the Householder reflector mapping `c` onto the first axis.
fn householder_complement(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let u = c / c.norm();
    let mut v = u.clone();
    v[0] += if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let vv = v.dot(&v);
    let mut z = DMatrix::zeros(k, k - 1);
    for col in 1..k {
        for row in 0..k {
            let id = if row == col { 1.0 } else { 0.0 };
            z[(row, col - 1)] = id - 2.0 * v[row] * v[col] / vv;
        }
    }
    z
}

/// Evaluated smooth: constrained basis values, penalty and transform.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub constraint_transform: DMatrix<f64>,
}

pub fn eval_basis(spec: &SmoothSpec, x: &[f64]) -> Result<BasisMatrix, BasisError> {
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(BasisError::NonFiniteInput { index });
    }
    let z = spec.constraint_transform();
    let values = spec.basis().design(x) * &z;
    let penalty = constrain_penalty(&spec.basis().second_derivative_gram(), &z);
    Ok(BasisMatrix {
        values,
        penalty,
        constraint_transform: z,
    })
}

/// Second-derivative penalty `Zᵀ S Z` in the constrained parameterization.
pub fn penalty_matrix(spec: &SmoothSpec) -> DMatrix<f64> {
    constrain_penalty(
        &spec.basis().second_derivative_gram(),
        &spec.constraint_transform(),
    )
}

fn constrain_penalty(s: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let p = z.transpose() * s * z;
    (&p + p.transpose()) * 0.5
}

/// Multiplies each basis row by the matching `by` value.
pub fn expand_by(basis: &BasisMatrix, by: &[f64]) -> Result<BasisMatrix, BasisError> {
    if by.len() != basis.values.nrows() {
        return Err(BasisError::LengthMismatch {
            expected: basis.values.nrows(),
            found: by.len(),
        });
    }
    let mut values = basis.values.clone();
    for (mut row, &b) in values.row_iter_mut().zip(by) {
        row *= b;
    }
    Ok(BasisMatrix {
        values,
        penalty: basis.penalty.clone(),
        constraint_transform: basis.constraint_transform.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{place_knots, PlacementRule};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect()
    }

    fn spec(x: &[f64], k: usize, kind: ConstraintKind) -> SmoothSpec {
        let knots = place_knots(x, k, PlacementRule::Quantile).unwrap();
        let c = kind.resolve(&knots, x).unwrap();
        SmoothSpec::new("s(x)", "x", knots, c, None).unwrap()
    }

    /// Least-squares coefficients reproducing `f` exactly when `f` lies in the
    /// spline space.
    fn represent(s: &SmoothSpec, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let (lo, hi) = s.knots.boundary();
        let pts: Vec<f64> = (0..400)
            .map(|i| lo + (hi - lo) * i as f64 / 399.0)
            .collect();
        let b = s.basis().design(&pts);
        let y = DVector::from_iterator(pts.len(), pts.iter().map(|&x| f(x)));
        b.svd(true, true).solve(&y, 1e-13).unwrap()
    }

    #[test]
    fn partition_of_unity_at_random_interior_points() {
        let x = sample(300, 1);
        let s = spec(&x, 12, ConstraintKind::None);
        let (lo, hi) = s.knots.boundary();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<f64> = (0..1000)
            .map(|_| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        let b = eval_basis(&s, &pts).unwrap();
        for row in b.values.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_to_zero_columns_vanish_over_data() {
        let x = sample(500, 3);
        let s = spec(&x, 10, ConstraintKind::SumToZero);
        let b = eval_basis(&s, &x).unwrap();
        assert_eq!(b.values.ncols(), 9);
        for col in b.values.column_iter() {
            assert!(col.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn point_constraint_vanishes_at_point() {
        let x = sample(200, 4);
        let s = spec(&x, 8, ConstraintKind::Point { at: 0.37 });
        let b = eval_basis(&s, &[0.37]).unwrap();
        assert_eq!(b.values.ncols(), 7);
        assert!(b.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn interval_constraint_integrates_to_zero() {
        let x = sample(200, 5);
        let s = spec(
            &x,
            8,
            ConstraintKind::SumToZeroOver {
                low: 0.0,
                high: 1.0,
            },
        );
        let z = s.constraint_transform();
        let ints = DVector::from_vec(s.basis().integrals(0.0, 1.0));
        let projected = z.transpose() * ints;
        assert!(projected.amax() < 1e-12);
    }

    #[test]
    fn constraint_transform_has_orthonormal_columns() {
        let x = sample(300, 6);
        for kind in [
            ConstraintKind::SumToZero,
            ConstraintKind::Point { at: 0.1 },
            ConstraintKind::None,
        ] {
            let z = spec(&x, 11, kind).constraint_transform();
            let ztz = z.transpose() * &z;
            let eye = DMatrix::<f64>::identity(ztz.nrows(), ztz.ncols());
            assert!((ztz - eye).amax() < 1e-10);
        }
    }

    #[test]
    fn linear_functions_are_unpenalized() {
        let x = sample(300, 7);
        let s = spec(&x, 10, ConstraintKind::None);
        let gamma = represent(&s, |t| 2.5 - 1.5 * t);
        let sgram = penalty_matrix(&s);
        let q = (gamma.transpose() * &sgram * &gamma)[(0, 0)];
        assert!(q.abs() < 1e-10, "{q}");
    }

    #[test]
    fn cubic_penalty_matches_closed_form_integral() {
        let x = sample(300, 8);
        let s = spec(&x, 9, ConstraintKind::None);
        let (a, b) = s.knots.boundary();
        let (c2, c3) = (0.7, -1.3);
        let gamma = represent(&s, |t| 0.4 + 0.2 * t + c2 * t * t + c3 * t * t * t);
        let q = (gamma.transpose() * penalty_matrix(&s) * &gamma)[(0, 0)];
        // ∫ (6 c3 t + 2 c2)^2 dt = [(6 c3 t + 2 c2)^3 / (18 c3)]
        let prim = |t: f64| (6.0 * c3 * t + 2.0 * c2).powi(3) / (18.0 * c3);
        let exact = prim(b) - prim(a);
        assert!((q - exact).abs() < 1e-8 * exact.abs(), "{q} vs {exact}");
    }

    #[test]
    fn penalty_is_symmetric_psd() {
        let x = sample(300, 9);
        for kind in [ConstraintKind::SumToZero, ConstraintKind::None] {
            let p = penalty_matrix(&spec(&x, 15, kind));
            assert_eq!(p, p.transpose());
            let ev = p.symmetric_eigenvalues();
            assert!(ev.min() >= -1e-10 * ev.max());
        }
    }

    #[test]
    fn constrained_null_space_holds_linear_functions() {
        // After a sum-to-zero constraint the penalty null space is the one
        // linear function satisfying the constraint.
        let x = sample(300, 10);
        let s = spec(&x, 12, ConstraintKind::SumToZero);
        let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
        let gamma = represent(&s, |t| t - mean);
        let z = s.constraint_transform();
        let theta = z.transpose() * &gamma;
        assert!((&z * &theta - &gamma).amax() < 1e-8);
        let q = (theta.transpose() * penalty_matrix(&s) * &theta)[(0, 0)];
        assert!(q.abs() < 1e-10);
    }

    #[test]
    fn expand_by_scales_rows() {
        let x = sample(50, 11);
        let s = spec(&x, 6, ConstraintKind::SumToZero);
        let b = eval_basis(&s, &x).unwrap();
        let ones = expand_by(&b, &vec![1.0; 50]).unwrap();
        assert_eq!(ones, b);
        let zeros = expand_by(&b, &vec![0.0; 50]).unwrap();
        assert!(zeros.values.iter().all(|&v| v == 0.0));
        let ind: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
        let e = expand_by(&b, &ind).unwrap();
        for i in 0..50 {
            let expect = if i % 2 == 1 {
                b.values.row(i).into_owned()
            } else {
                b.values.row(i) * 0.0
            };
            assert_eq!(e.values.row(i), expect);
        }
        assert_eq!(e.penalty, b.penalty);
        assert!(matches!(
            expand_by(&b, &[1.0]),
            Err(BasisError::LengthMismatch {
                expected: 50,
                found: 1
            })
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = sample(50, 12);
        let s = spec(&x, 6, ConstraintKind::None);
        assert_eq!(
            eval_basis(&s, &[0.0, f64::INFINITY]).unwrap_err(),
            BasisError::NonFiniteInput { index: 1 }
        );
    }

    #[test]
    fn spec_survives_json_round_trip() {
        let x = sample(80, 13);
        let s = spec(&x, 7, ConstraintKind::SumToZero);
        let json = serde_json::to_string(&s).unwrap();
        let back: SmoothSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = json.replace("\"basis_dim\":7", "\"basis_dim\":8");
        assert!(serde_json::from_str::<SmoothSpec>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn evaluation_is_reproducible(seed in 0u64..1000, k in 4usize..20) {
            let x = sample(60, seed);
            let s = spec(&x, k, ConstraintKind::SumToZero);
            let a = eval_basis(&s, &x).unwrap();
            let b = eval_basis(&s, &x).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn linear_null_space_for_any_knots(seed in 0u64..1000, k in 4usize..25) {
            let x = sample(120, seed);
            let s = spec(&x, k, ConstraintKind::None);
            let p = penalty_matrix(&s);
            for f in [|_: f64| 1.0, |t: f64| t] {
                let g = represent(&s, f);
                let q = (g.transpose() * &p * &g)[(0, 0)];
                prop_assert!(q.abs() < 1e-10 * p.norm() * g.norm_squared());
            }
        }
    }
}
