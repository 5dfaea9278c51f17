use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::DISTANCE_FILTERS;
use super::HarnessError;
use crate::geom::GroundTransform;
use crate::synth::lidar::{add_noise, cast_scan, LidarConfig, Placement};
use crate::synth::{MeshEntry, SceneSample};

/// Timing and reference data for one step of a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    /// Seconds between the two scans of this step.
    pub dt: f64,
    pub gt: GroundTransform,
    /// Planar point whose displacement defines the step's translation,
    /// usually the centroid of the first scan.
    pub anchor: [f64; 2],
    pub distance_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityRow {
    pub max_distance_m: f64,
    pub count: usize,
    pub rmse_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    pub method: String,
    pub filters: Vec<VelocityRow>,
}

fn displacement(t: &GroundTransform, anchor: [f64; 2]) -> [f64; 2] {
    let (x, y) = t.apply_xy(anchor[0], anchor[1]);
    [x - anchor[0], y - anchor[1]]
}

/// Speeds from predicted transforms, each translation averaged with those of
/// its neighbours (fewer at the ends of the track).
pub fn smoothed_speeds(frames: &[TrackFrame], preds: &[GroundTransform]) -> Vec<f64> {
    let u: Vec<[f64; 2]> = frames.iter().zip(preds).map(|(f, p)| displacement(p, f.anchor)).collect();
    (0..u.len())
        .map(|i| {
            let window = &u[i.saturating_sub(1)..(i + 2).min(u.len())];
            let n = window.len() as f64;
            let mx = window.iter().map(|v| v[0]).sum::<f64>() / n;
            let my = window.iter().map(|v| v[1]).sum::<f64>() / n;
            mx.hypot(my) / frames[i].dt
        })
        .collect()
}

pub fn velocity_rmse(method: &str, frames: &[TrackFrame], preds: &[GroundTransform]) -> Result<VelocityReport, HarnessError> {
    if frames.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if preds.len() != frames.len() {
        return Err(HarnessError::CountMismatch { predictions: preds.len(), samples: frames.len() });
    }
    if let Some(f) = frames.iter().find(|f| !(f.dt > 0.0)) {
        return Err(HarnessError::Config(format!("non-positive time step {}", f.dt)));
    }
    let speeds = smoothed_speeds(frames, preds);
    let truth: Vec<f64> = frames.iter().map(|f| {
        let d = displacement(&f.gt, f.anchor);
        d[0].hypot(d[1]) / f.dt
    }).collect();
    let filters = DISTANCE_FILTERS
        .iter()
        .map(|&limit| {
            let sq: Vec<f64> = (0..frames.len())
                .filter(|&i| frames[i].distance_d <= limit)
                .map(|i| (speeds[i] - truth[i]).powi(2))
                .collect();
            let count = sq.len();
            VelocityRow {
                max_distance_m: limit,
                count,
                rmse_v: (count > 0).then(|| (sq.iter().sum::<f64>() / count as f64).sqrt()),
            }
        })
        .collect();
    Ok(VelocityReport { method: method.to_string(), filters })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub frames: usize,
    pub dt: f64,
    /// Meters per second along the current heading.
    pub speed: f64,
    /// Radians per second.
    pub yaw_rate: f64,
    pub start: GroundTransform,
    pub scale: f64,
    pub noise: bool,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            dt: 0.1,
            speed: 10.0,
            yaw_rate: 0.0,
            start: GroundTransform::new(12.0, -8.0, 0.5),
            scale: 4.0,
            noise: true,
        }
    }
}

/// A mesh driving with constant speed and yaw rate, scanned once per frame.
/// Step `k` pairs scan `k` with scan `k + 1`.
pub fn synthetic_track(
    entry: &MeshEntry,
    lidar: &LidarConfig,
    cfg: &TrackConfig,
    seed: u64,
) -> Result<Vec<(SceneSample, TrackFrame)>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = vec![cfg.start];
    for _ in 0..cfg.frames {
        let p = poses[poses.len() - 1];
        let step = cfg.speed * cfg.dt;
        poses.push(GroundTransform::new(p.tx + step * p.yaw.cos(), p.ty + step * p.yaw.sin(), p.yaw + cfg.yaw_rate * cfg.dt));
    }
    let mut scans = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        let placement = Placement { pose: *pose, scale: cfg.scale };
        let center = placement.center(&entry.mesh, lidar);
        let d = center.x.hypot(center.y);
        let scan = cast_scan(&entry.mesh, &placement, lidar)?;
        if scan.is_empty() {
            return Err(HarnessError::Config(format!("track frame {k} is not visible from the sensor")));
        }
        let scan = if cfg.noise { add_noise(&scan, d, &mut rng) } else { scan };
        scans.push((scan, center, d));
    }
    let mut out = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let (c1, center1, d1) = &scans[k];
        let (c2, center2, _) = &scans[k + 1];
        let gt = poses[k + 1].compose(&poses[k].invert());
        let anchor = c1.centroid()?;
        let sample = SceneSample {
            cloud1: c1.clone(),
            cloud2: c2.clone(),
            gt,
            center1: *center1,
            center2: *center2,
            heading1: poses[k].yaw,
            heading2: poses[k + 1].yaw,
            distance_d: *d1,
            class_label: entry.class_label.clone(),
            mesh_id: entry.id.clone(),
        };
        out.push((sample, TrackFrame { dt: cfg.dt, gt, anchor: [anchor.x, anchor.y], distance_d: *d1 }));
    }
    Ok(out)
}
