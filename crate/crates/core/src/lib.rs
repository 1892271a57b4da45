//! Kernel quantile regression with additive kernels.
//!
//! The crate bundles the estimator (pinball-loss SVM over an RKHS, solved
//! by dual coordinate ascent), exact finite-measure integral operators for
//! approximation-error checks, empirical covering-number constructions,
//! closed-form learning-rate exponents, and a synthetic experiment harness.
//! The `kqr` binary exposes all of it on the command line.

pub mod data;
pub mod error;
pub mod kernels;
pub mod loss;
pub mod solver;
pub mod spectral;
pub mod rates;
pub mod capacity;
pub mod experiments;
pub mod suites;
pub mod cli;

pub use data::{DataSet, Points};
pub use error::{Error, Result};
pub use kernels::{gram, rkhs_norm_sq, BlockLayout, GramMatrix, KernelSpec};
pub use loss::{clip, empirical_risk, pinball, shifted, PinballLoss, RiskValue};
pub use solver::{duality_gap, fit, objective, predict, FitOptions, Model, Objectives};
