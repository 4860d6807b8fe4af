//! Minimal dense-tensor numeric core with reverse-mode automatic
//! differentiation.
//!
//! Everything is 64-bit floats in row-major order. Operations are recorded
//! eagerly on a [`Graph`] tape; [`Graph::backward`] walks the tape in reverse
//! and accumulates gradients into every `requires_grad` leaf. The op set is
//! exactly what the carbon model needs: direct convolution, dense layers,
//! global average pooling, elementwise activations, softmax, and the small
//! algebra used to assemble losses.
//!
//! Non-finite values are hard errors, both at tensor creation and as op
//! outputs.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod io;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, TensorId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors surfaced by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{op} expects a scalar (1-element) tensor, got {numel} elements")]
    NotScalar { op: &'static str, numel: usize },
    #[error("invalid argument for {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad tensor file header in {path}: {detail}")]
    BadHeader { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, NumError>;
