//! Dense tensors with a recording tape for reverse-mode gradients, plus the
//! parameter store, Adam and the checkpoint format used by the network.
//!
//! Values are 32-bit by default; the `f64` feature switches [`Real`] to 64-bit.

mod adam;
mod gemm;
mod store;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use store::{bn_decay, load_checkpoint, save_checkpoint, Checkpoint, ParamId, ParamKind, ParamStore};
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(not(feature = "f64"))]
pub type Real = f32;
#[cfg(feature = "f64")]
pub type Real = f64;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} needs {what}")]
    Precondition { op: &'static str, what: String },
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("checkpoint {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Format(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::Shape { op, detail: detail.into() }
}
