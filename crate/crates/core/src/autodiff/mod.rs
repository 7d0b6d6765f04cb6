//! Reverse-mode automatic differentiation used to train the grid models.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, grad_check_tensors};
pub use tape::{softplus, softplus_inv, Gradients, Op, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Usage(String),
}
