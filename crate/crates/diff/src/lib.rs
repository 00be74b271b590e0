//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as a node whose parents were recorded
//! earlier, so node order is already a topological order and
//! [`Tape::backward`] simply walks it in reverse, visiting each node once.
//!
//! The op set is deliberately small: matmul, elementwise add, bias add,
//! relu, max over an axis, concat, reshape, squared norm, scalar scale, row
//! gather, plus [`Tape::custom`] for losses that supply their own
//! vector-Jacobian product.

mod adam;
mod check;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{central_difference, grad_check, grad_check_coords, relative_error};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
