//! Dense matrices, reverse-mode differentiation and the AdamW optimizer.
//!
//! Everything downstream trains through [`Graph`]: a define-by-run tape that
//! is rebuilt for every mini-batch and swept once in reverse.

mod gradcheck;
mod graph;
mod matrix;
mod ops;
mod optim;
mod real;

pub use gradcheck::{grad_check, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use matrix::Matrix;
pub use ops::{argmax, cross_entropy, l2_norm, l2_norm_grad, softmax, softplus, top_k};
pub use optim::{AdamW, AdamWConfig};
pub use real::{FloatWidth, Real};

use thiserror::Error;

/// Smoothing added under the square root of every L2 norm.
pub const EPS_NORM: f64 = 1e-12;
/// Offset inside the logarithm of the cross-entropy.
pub const EPS_LOG: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", .left.0, .left.1, .right.0, .right.1)]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix {rows}x{cols} needs {} values, got {len}", .rows * .cols)]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} entries, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Argument(String),
}
