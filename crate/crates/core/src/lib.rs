//! Entropy dynamics of tabular softmax policies, numerically verified.
//!
//! The crate implements four policy-update rules — vanilla policy gradient,
//! entropy regularization, covariance-band clipping (Clip-Cov) and a
//! covariance-targeted KL penalty (KL-Cov) — on exactly solvable bandits and
//! small MDPs, together with the diagnostics that check their first-order
//! entropy-change predictions, stability margins, bias/variance behavior and
//! convergence against exact ground truth.
//!
//! All numerics are generic over the [`scalar::Real`] scalar; the aliases
//! below fix `f64`, the precision used by the experiment harness.

pub mod diag;
pub mod error;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod task;
pub mod update;

pub use error::{Error, Result};

/// Default-precision (f64) aliases for the main types.
pub type Policy = policy::SoftmaxPolicy<f64>;
pub type Task = task::TabularTask<f64>;
pub type Advantages = task::AdvantageTable<f64>;
pub type Batch = task::SampledBatch<f64>;
pub type Rule = update::UpdateRule<f64>;
pub type Update = update::UpdateBatch<f64>;
pub type TokenCov = update::TokenCovariance<f64>;
pub type StepDiag = diag::StepDiagnostics<f64>;

/// Single-precision aliases, mainly exercised by the generic-scalar tests.
pub type PolicyF32 = policy::SoftmaxPolicy<f32>;
pub type TaskF32 = task::TabularTask<f32>;
