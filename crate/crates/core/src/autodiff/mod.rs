//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records primitives eagerly. Gradients are produced by a
//! symbolic reverse sweep that itself emits graph nodes, so differentiating a
//! gradient again (Hessian-vector products) needs no extra machinery.
//! [`cg_solve`] applies a damped inverse Hessian through those products.

mod cg;
mod graph;
mod hvp;
mod tensor;

pub use cg::{cg_solve, CgSolution};
pub use graph::{flop_count, Graph, Var};
pub use hvp::{gradient, hessian_vector_product, HessianOperator};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("gradient requested of a non-scalar output with shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("vector length {actual} does not match parameter length {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("solver produced a non-finite value at iteration {iteration}")]
    SolverNonFinite { iteration: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
