//! Minimal dense-tensor math with reverse-mode gradients and an
//! adaptive-moment optimizer. Everything is 64-bit and single-threaded per
//! graph; the models in `selectors` are small enough that double precision
//! and exact reproducibility matter more than speed.

mod check;
mod graph;
mod optim;
mod tensor;

pub use check::grad_check_entries;
pub use graph::{Axis, Graph, Gradients, NodeId};
pub use optim::{Adam, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training error: NaN gradient in parameter '{0}'")]
    NanGradient(String),
}
