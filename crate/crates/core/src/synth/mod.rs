//! Synthetic scan-pair generation: meshes, a spinning-LiDAR ray caster,
//! range-dependent noise, scene sampling and the on-disk dataset format.

use std::path::PathBuf;

use thiserror::Error;

pub mod dataset;
pub mod lidar;
pub mod mesh;
pub mod scene;

pub use dataset::{read_dataset, write_dataset, DatasetIndex, DatasetReader};
pub use lidar::{add_noise, cast_scan, noise_sigma, LidarConfig, Placement};
pub use mesh::{load_mesh, normalize_mesh, parse_off, Mesh};
pub use scene::{generate_scenes, sample_scene, MeshEntry, SceneConfig, SceneSample};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no faces or no vertices")]
    EmptyMesh,
    #[error("mesh has zero extent on every axis")]
    DegenerateMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mesh pool is empty")]
    EmptyPool,
    #[error("gave up on mesh {mesh_id} after {retries} resamples with too few points")]
    RetriesExhausted { mesh_id: String, retries: usize },
    #[error("{path}: not a pcalign dataset or unsupported version {found:?}")]
    Version { path: PathBuf, found: Option<u32> },
    #[error("record {index} is corrupt: {reason}")]
    CorruptRecord { index: usize, reason: String },
}
