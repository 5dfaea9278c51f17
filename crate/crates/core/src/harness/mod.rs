//! Training, evaluation, timing and the `pcalign` command line.

mod bench;
mod cli;
mod config;
mod eval;
mod predict;
mod sampling;
mod train;
mod velocity;

use std::path::PathBuf;

pub use bench::{bench, TimingRow, BATCH_SIZES};
pub use cli::cli;
pub use config::{init_threads, EvalConfig, GenConfig, PcalignConfig};
pub use eval::{
    evaluate, read_predictions, sample_errors, write_jsonl, BinAccuracy, FilterMetrics, MetricsReport, Prediction,
    DISTANCE_FILTERS, THRESHOLDS,
};
pub use predict::{predict_alignnet, predict_icp, IcpRecord};
pub use sampling::{augment, fixed_inputs, point_rng, sample_points};
pub use train::{train, LossRecord, TrainConfig, TrainOutcome, Trainer, LOSS_CSV_HEADER};
pub use velocity::{smoothed_speeds, synthetic_track, velocity_rmse, TrackConfig, TrackFrame, VelocityReport, VelocityRow};

use crate::alignnet::{AlignNetError, LossBreakdown};
use crate::autodiff::AutodiffError;
use crate::geom::GeomError;
use crate::icp::IcpError;
use crate::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot sample points from an empty cloud")]
    EmptyCloud,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{predictions} predictions for {samples} samples")]
    CountMismatch { predictions: usize, samples: usize },
    #[error("prediction refers to unknown or repeated sample {0}")]
    BadSampleId(usize),
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFiniteLoss { step: usize, breakdown: LossBreakdown },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Icp(#[from] IcpError),
    #[error(transparent)]
    AlignNet(#[from] AlignNetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

impl HarnessError {
    /// 1 for bad usage or configuration, 2 for everything that went wrong
    /// with the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Synth(SynthError::Config(_)) | HarnessError::Icp(IcpError::InvalidConfig(_)) => 1,
            HarnessError::AlignNet(AlignNetError::Config(_)) => 1,
            _ => 2,
        }
    }
}
