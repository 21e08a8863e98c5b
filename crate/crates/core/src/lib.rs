//! Kernel mean shrinkage estimators.
//!
//! Given a sample `x_1..x_n` and a positive-definite kernel `k`, the empirical
//! kernel mean `(1/n) sum_i k(x_i, .)` can be improved by shrinking it toward
//! zero (or another target). This crate provides the plain estimator, the
//! simple shrinkage estimator (S-KMSE), the spectral-filter estimator
//! (F-KMSE), leave-one-out selection of the shrinkage parameter, shrinkage
//! centering for kernel PCA, and an exact oracle for Gaussian mixtures used
//! to measure true risk.

pub mod centering;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod kernels;
pub mod model_selection;
pub mod operators;
pub mod oracle;
pub mod rng;
pub mod spectral;

mod serde_util;

pub use data::{DataMatrix, Standardizer};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, KernelMeanEstimate};
pub use kernels::{GramMatrix, KernelConfig, KernelFamily, KernelSpec};
pub use spectral::SpectralDecomposition;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/centering.md")]
    mod centering {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
