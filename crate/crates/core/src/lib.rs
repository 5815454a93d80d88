//! Granger-causality network inference for multivariate categorical time series.
//!
//! Two per-series transition models are fit with sparsity-inducing penalties:
//! the convex reparameterization of the mixture transition distribution
//! ([`mtd`]), fit by projected gradient with Dykstra projections
//! ([`projection`]), and the multinomial logistic transition model
//! ([`mltd`]), fit by proximal gradient with group soft-thresholding.
//! [`simulate`] generates benchmark data and [`evaluation`] scores recovered
//! graphs along a regularization path.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod bench;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fit;
pub mod io;
pub mod layout;
pub mod matrix;
pub mod mltd;
pub mod mtd;
pub mod projection;
mod scalar;
pub mod simulate;

pub use data::{transition_pairs, validate_dataset, CategoricalDataset, TransitionSample, TransitionSet};
pub use error::{Error, Result};
pub use fit::{FitStatus, ModelKind, PenaltyKind};
pub use layout::ParamLayout;
pub use matrix::Matrix;
pub use scalar::Scalar;









pub type GrangerGraph = data::GrangerGraph<f64>;
pub type MtdParams = mtd::MtdParams<f64>;
pub type MtdFitConfig = mtd::MtdFitConfig<f64>;
pub type MltdParams = mltd::MltdParams<f64>;
pub type MltdFitConfig = mltd::MltdFitConfig<f64>;
pub type MtdConstraintSet = projection::MtdConstraintSet<f64>;
pub type RegPath = evaluation::RegPath<f64>;
