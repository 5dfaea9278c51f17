use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bench::BATCH_SIZES;
use super::HarnessError;
use crate::alignnet::LossConfig;
use crate::icp::IcpConfig;
use crate::synth::{LidarConfig, SceneConfig};

use super::train::TrainConfig;

/// Where scene meshes come from. Without `meshes`, a procedural car pool
/// (plus optional persons) is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Root of a ModelNet-style `<class>/<split>/*.off` tree.
    pub meshes: Option<PathBuf>,
    /// `mesh_id,yaw` table rotating meshes to face +x.
    pub orientation_fixes: Option<PathBuf>,
    pub procedural_cars: usize,
    pub procedural_persons: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { meshes: None, orientation_fixes: None, procedural_cars: 40, procedural_persons: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub axis_symmetric: bool,
    /// Pairs per forward pass when predicting with the network.
    pub batch: usize,
    pub batch_sizes: Vec<usize>,
    pub icp: IcpConfig,
    /// Points per cloud handed to ICP; unset uses the full scans.
    pub icp_points: Option<usize>,
    /// Points per cloud in the ICP benchmark.
    pub bench_points: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            axis_symmetric: false,
            batch: 64,
            batch_sizes: BATCH_SIZES.to_vec(),
            icp: IcpConfig::default(),
            icp_points: None,
            bench_points: 512,
            seed: 0,
        }
    }
}

/// Everything the command line can be configured with, as read from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcalignConfig {
    pub scene: SceneConfig,
    pub lidar: LidarConfig,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl PcalignConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, HarnessError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text =
            std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    /// Applies one seed to every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }
}

/// Sizes the global worker pool from `PCALIGN_THREADS` if set. Returns the
/// thread count in effect.
pub fn init_threads() -> Result<usize, HarnessError> {
    if let Ok(v) = std::env::var("PCALIGN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| HarnessError::Config(format!("PCALIGN_THREADS must be a positive integer, got {v:?}")))?;
        // A pool built earlier in the process wins; that only happens in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_override_defaults() {
        let text = "[train]\nepochs = 3\nbatch = 4\n[loss]\nlambda1 = 0.25\n[eval]\naxis_symmetric = true\n";
        let c = PcalignConfig::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.lr, 0.005);
        assert_eq!(c.loss.lambda1, 0.25);
        assert!(c.eval.axis_symmetric);
        assert_eq!(c.scene, SceneConfig::default());
    }

    #[test]
    fn unknown_section_is_a_config_error() {
        let err = PcalignConfig::parse("[trian]\nepochs = 3\n", Path::new("x.toml")).unwrap_err();
        assert!(matches!(err, HarnessError::Config(ref m) if m.contains("x.toml")), "{err}");
    }

    #[test]
    fn default_round_trips_through_toml() {
        let c = PcalignConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(PcalignConfig::parse(&text, Path::new("d.toml")).unwrap(), c);
    }
}
