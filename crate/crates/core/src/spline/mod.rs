//! Cubic B-spline smooths: knot placement, basis evaluation, the
//! second-derivative penalty and identifiability constraints.

mod bspline;
mod knots;
mod smooth;

pub use bspline::CubicBSpline;
pub(crate) use knots::quantile_type7;
pub use knots::{place_knots, KnotSequence, PlacementRule};
pub use smooth::{
    eval_basis, expand_by, penalty_matrix, BasisMatrix, Constraint, ConstraintKind, SmoothSpec,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("no covariate values supplied")]
    EmptyInput,
    #[error("covariate has {distinct} distinct values but basis_dim {required} needs at least that many")]
    TooFewDistinctValues { distinct: usize, required: usize },
    #[error("non-finite covariate value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("basis_dim must be at least 4 for a cubic spline, got {0}")]
    InvalidBasisDim(usize),
    #[error("invalid knot sequence: {0}")]
    InvalidKnots(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}
