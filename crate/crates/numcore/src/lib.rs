//! Minimal dense-tensor engine with tape-based reverse-mode autodiff,
//! attention/normalization primitives, and a small binary tensor format.
//! Everything is f64 and single-threaded; graphs are rebuilt every step.

pub mod gradcheck;
mod graph;
mod mask;
mod serial;
mod tensor;

pub use graph::{Graph, Tid, MASK_NEG};
pub use mask::BoolMat;
pub use serial::{load_tensor, save_tensor, TENSOR_MAGIC};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("bad tensor file: {detail}")]
    Format { detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumError>;
