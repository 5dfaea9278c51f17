use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::Prediction;
use super::sampling::fixed_inputs;
use super::HarnessError;
use crate::alignnet::AlignNet;
use crate::icp::{icp_p2p, IcpConfig};
use crate::synth::SceneSample;

/// Network predictions for every sample, `batch` pairs per forward pass.
/// Each pair sees the points [`fixed_inputs`] picks for `(seed, index)`; the
/// wall time of a batch is split evenly across its pairs.
pub fn predict_alignnet(
    net: &AlignNet,
    samples: &[SceneSample],
    batch: usize,
    seed: u64,
) -> Result<Vec<Prediction>, HarnessError> {
    if batch == 0 {
        return Err(HarnessError::Config("batch size 0".into()));
    }
    let n = net.config.n_points;
    let mut out = Vec::with_capacity(samples.len());
    let ids: Vec<usize> = (0..samples.len()).collect();
    for chunk in ids.chunks(batch) {
        let inputs: Vec<_> = chunk.iter().map(|&i| fixed_inputs(&samples[i], i, n, seed)).collect::<Result<_, _>>()?;
        let (c1, c2): (Vec<_>, Vec<_>) = inputs.into_iter().unzip();
        let t0 = Instant::now();
        let transforms = net.align_batch(&c1, &c2)?;
        let ms = 1e3 * t0.elapsed().as_secs_f64() / chunk.len() as f64;
        out.extend(chunk.iter().zip(&transforms).map(|(&i, t)| Prediction::new(i, t, ms)));
    }
    Ok(out)
}

/// A prediction plus ICP diagnostics. Reads back as a plain [`Prediction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpRecord {
    #[serde(flatten)]
    pub prediction: Prediction,
    pub iterations: usize,
    pub inlier_count: usize,
    pub inlier_rmse: f64,
    pub converged: bool,
}

/// ICP from cloud 1 onto cloud 2 for every sample, in parallel. With
/// `n_points`, both clouds are first reduced as for the network.
pub fn predict_icp(
    samples: &[SceneSample],
    cfg: &IcpConfig,
    n_points: Option<usize>,
    seed: u64,
) -> Result<Vec<IcpRecord>, HarnessError> {
    cfg.validate()?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (a, b) = match n_points {
                Some(n) => fixed_inputs(s, i, n, seed)?,
                None => (s.cloud1.clone(), s.cloud2.clone()),
            };
            let t0 = Instant::now();
            let r = icp_p2p(&a, &b, cfg, None)?;
            let ms = 1e3 * t0.elapsed().as_secs_f64();
            Ok(IcpRecord {
                prediction: Prediction::new(i, &r.transform, ms),
                iterations: r.iterations,
                inlier_count: r.inlier_count,
                inlier_rmse: r.inlier_rmse,
                converged: r.converged,
            })
        })
        .collect()
}
