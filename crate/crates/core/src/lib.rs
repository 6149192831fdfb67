//! Balanced self-taught reasoning loops.
//!
//! The crate couples a synthetic chain-arithmetic reasoning task with a
//! trainable tabular softmax policy and implements the self-improvement
//! loop variants (SFT, ReST-EM, iterative RFT, online RFT and B-STaR) on top
//! of it. B-STaR picks the sampling temperature and reward threshold at every
//! iteration by maximizing the average balance score on a probe set.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the experiment harness.

pub mod controller;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod rewarding;
pub mod rollout;
pub mod scalar;
pub mod seed;
pub mod task;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision policy table; the default for experiments.
pub type Policy = policy::PolicyParams<f64>;
/// Single-precision policy table.
pub type Policy32 = policy::PolicyParams<f32>;
/// Optimizer state matching [`Policy`].
pub type Optimizer = optim::OptimizerState<f64>;
/// Optimizer state matching [`Policy32`].
pub type Optimizer32 = optim::OptimizerState<f32>;
/// Snapshot of a [`Policy`].
pub type Snapshot = policy::PolicySnapshot<f64>;
