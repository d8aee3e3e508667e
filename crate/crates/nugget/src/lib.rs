//! Variance and kernel hyperparameter estimation for semiparametric Gaussian
//! process regression.
//!
//! The marginal likelihood of `z = Xβ + δ + ε` with `Cov(δ) = σ²K` and
//! `Cov(ε) = σ₀²I` is maximized by profiling out `σ²` and finding the roots of
//! the derivative in the single ratio `η = σ₀²/σ²`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod analysis;
pub mod bessel;
pub mod data;
pub mod design;
pub mod error;
pub mod estimate;
pub mod kernels;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod nelder_mead;
pub mod par;
pub mod rootfind;
pub mod serde_ext;
pub mod trace;

pub use error::{Error, Result};
