//! Estimation of a monotone link `Y = h(X) + e` between two datasets that
//! share no record identifiers.
//!
//! Each group of matched context values is fitted independently by composing
//! the empirical CDF of `X` with the pseudo-inverse of the deconvolved CDF of
//! `Y`. See [`linkfit::match_merge`] for the grouped estimator and
//! [`separable::match_merge_sep`] for the regression-controlled variant.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deconvolution;
pub mod distributions;
pub mod error;
pub mod isotonic;
pub mod linkfit;
pub mod matching;
mod quad;
pub mod rng;
pub mod separable;
pub mod simlab;

pub use deconvolution::{
    deconvolve, deconvolve_with, empirical_char_fn, noise_advantage, psi_rate, DeconvConfig,
    DeconvSettings, DeconvolvedCdf, UniformGrid,
};
pub use distributions::{
    char_fn, empirical_cdf, phi_bound, pseudo_inverse, sample_noise, BoundParams, CdfKind,
    NoiseSpec, StepCdf,
};
pub use error::{Error, Result};
pub use linkfit::{
    band_from_bounds, fit_group, holder_error_bound, match_merge, quantile_identity_check,
    FitOptions, HolderParams, LinkEstimate, MatchMergeResult,
};
pub use matching::{
    group_exact, group_near, ColumnKind, ContextValue, Dataset, GroupKey, GroupMap,
};
pub use separable::{fit_linear, match_merge_sep, LinearModel, ResidualPair};
pub use simlab::{
    evaluate, run_grid_experiment, run_misspecified, simulate, EvalReport, SimConfig,
};
