//! Bias-aware machine unlearning on small differentiable classifiers.
//!
//! The crate is layered bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation, Hessian-vector products and
//!   a damped Krylov solver.
//! - [`model`]: MLP classifiers, low-rank adapters, Adam training and the
//!   checkpoint format.
//! - [`biasgen`]: synthetic datasets with explicit semantic and bias feature
//!   blocks (patch shortcut, attribute imbalance, pose bins).
//! - [`unlearn`]: hard retraining, gradient ascent, LoRA unlearning,
//!   teacher-student distillation and the counterfactual Newton update.
//! - [`eval`]: accuracies, fairness gaps, membership inference AUC and
//!   gradient attributions.
//! - [`cobum`]: the composite unlearning score.
//! - [`harness`]: configuration, the end-to-end pipeline, report emission
//!   and the command line.

pub mod autodiff;
pub mod biasgen;
pub mod cobum;
pub mod eval;
pub mod harness;
pub mod model;
pub mod unlearn;
