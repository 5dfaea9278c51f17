//! Siamese canonical-pose network for aligning two partial scans of one object.
//!
//! Each branch removes the cloud's planar centroid, predicts a coarse object
//! center, then a refined center and a heading (as bin + residual), and moves
//! the cloud into a canonical frame before embedding it. A final head reads
//! both embeddings and predicts the remaining transform between the two
//! canonical frames.

mod angle;
mod loss;
mod model;

pub use angle::{angle_decode, angle_encode, argmax, bin_width, AngleTarget};
pub use loss::{compute_targets, staged_loss, LossBreakdown, LossConfig, LossTargets, PairTruth, StagedLoss};
pub use model::{
    canonical_transform, compose_alignment, order_free_centroid, AlignNet, AlignNetConfig, BranchOutput, ForwardPass,
    Mode,
};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum AlignNetError {
    #[error("expected {expected} points per cloud, got {got}")]
    WrongPointCount { expected: usize, got: usize },
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("missing targets: {0}")]
    MissingTargets(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
