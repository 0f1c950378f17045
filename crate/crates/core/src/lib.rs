//! Penalized-spline generalized additive models fitted per cohort, exported as
//! raw-data-free summaries, and combined by pointwise meta-analysis.
//!
//! The workflow mirrors a multi-site study where individual observations may
//! not leave a site:
//!
//! 1. each site fits a [`FittedGam`] with [`fit_gam`] using its own knots;
//! 2. [`strip_rawdata`] reduces the fit to a [`StrippedModel`] which is
//!    shared as canonical JSON;
//! 3. the coordinating site predicts each stripped model on a common grid
//!    with [`predict_term`] and pools the curves with [`pool_pointwise`].
//!
//! The [`sim`] module contains the Monte Carlo experiments comparing this
//! workflow to a joint ("mega") analysis of all data.

pub mod data;
pub mod fit;
pub mod formula;
pub mod meta;
pub mod sim;
pub mod spline;
pub mod strip;
pub mod svg;

mod linalg;

pub use data::{Column, DataError, DataTable};
pub use fit::{
    fit_gam, fit_random_intercept, predict_term, predict_term_with, select_lambda_gcv, term_pvalue,
    FitError, FitOptions, FittedGam, LambdaGrid, PredictOptions, PredictiveModel, TermPrediction,
};
pub use formula::{ModelFormula, SmoothTerm};
pub use meta::{
    cochran_q, combine_pvalues, confidence_band, dominance, pool_pointwise, CombineMethod,
    DominanceCurve, HeterogeneityCurve, MetaError, MetaFit, PoolMethod,
};
pub use spline::{
    eval_basis, expand_by, penalty_matrix, place_knots, BasisError, BasisMatrix, Constraint,
    KnotSequence, PlacementRule, SmoothSpec,
};
pub use strip::{strip_rawdata, ModelIoError, StrippedModel};
