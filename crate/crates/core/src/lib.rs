//! Mixtures of Gaussian factor analyzers fitted by the alternating
//! expectation-conditional maximization (AECM) algorithm, with optional
//! bounds on the eigenvalues of every component covariance matrix.
//!
//! The component covariance is `Σ_g = Λ_g Λ_g' + Ψ_g` with a `d × q`
//! loading matrix and a diagonal uniqueness matrix. Bounds `a ≤ λ ≤ b`
//! are enforced after each loading update by projecting through the
//! singular values of `Λ_g` and the diagonal of `Ψ_g`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aecm;
pub mod constraints;
pub mod data_io;
pub mod error;
pub mod linalg;
pub mod model;
pub mod simulation;

pub use aecm::{fit, FitConfig, FitResult, Init};
pub use constraints::{project, project_all, ProjectionMode};
pub use error::{MgfaError, Result};
pub use model::{Component, Dataset, EigenBounds, MgfaParams, Responsibilities};
pub use simulation::{builtin_mixture, misclassification_error, MixtureSpec};
