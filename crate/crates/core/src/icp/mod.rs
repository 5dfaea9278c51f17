//! Local point-to-point ICP restricted to ground-plane motion.
//!
//! Correspondences are found with full 3D nearest neighbours inside a fixed
//! radius; the update step projects matched pairs onto the xy plane and solves
//! for (tx, ty, yaw) in closed form.

mod kdtree;

pub use kdtree::KdTree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, GroundTransform, PointCloud};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IcpError {
    #[error("point cloud is empty")]
    EmptyInput,
    #[error("no correspondences within search radius")]
    NoCorrespondences,
    #[error("invalid ICP configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src_index: usize,
    pub dst_index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub radius: f64,
    pub max_iterations: usize,
    /// Translation threshold in meters.
    pub eps_translation: f64,
    /// Yaw threshold in radians.
    pub eps_yaw: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { radius: 0.1, max_iterations: 30, eps_translation: 1e-6, eps_yaw: 1e-6 }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<(), IcpError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(IcpError::InvalidConfig(format!("radius must be positive, got {}", self.radius)));
        }
        if self.max_iterations == 0 {
            return Err(IcpError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.eps_translation >= 0.0 && self.eps_yaw >= 0.0) {
            return Err(IcpError::InvalidConfig("convergence thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: GroundTransform,
    pub iterations: usize,
    pub inlier_count: usize,
    pub inlier_rmse: f64,
    pub converged: bool,
    /// Truncated objective `mean(min(d², r²))` after each accepted iteration,
    /// starting with the value at the initial transform.
    pub objective_history: Vec<f64>,
}

pub fn build_index(cloud: &PointCloud) -> Result<KdTree, IcpError> {
    KdTree::build(cloud)
}

/// For each source point, its nearest destination point within `radius`.
pub fn match_points(src: &PointCloud, dst_index: &KdTree, radius: f64) -> Vec<Correspondence> {
    src.points
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            dst_index
                .nearest_within(p, radius)
                .map(|(j, d2)| Correspondence { src_index: i, dst_index: j, distance: d2.sqrt() })
        })
        .collect()
}

/// Least-squares ground transform mapping matched source points onto their
/// destinations, using only xy coordinates.
pub fn solve_ground_alignment(
    corrs: &[Correspondence],
    src: &PointCloud,
    dst: &PointCloud,
) -> Result<GroundTransform, IcpError> {
    if corrs.is_empty() {
        return Err(IcpError::NoCorrespondences);
    }
    let n = corrs.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for c in corrs {
        let (p, q) = (&src.points[c.src_index], &dst.points[c.dst_index]);
        sx += p.x;
        sy += p.y;
        dx += q.x;
        dy += q.y;
    }
    let (sx, sy, dx, dy) = (sx / n, sy / n, dx / n, dy / n);

    let (mut cos_sum, mut sin_sum, mut spread) = (0.0, 0.0, 0.0);
    for c in corrs {
        let (p, q) = (&src.points[c.src_index], &dst.points[c.dst_index]);
        let (x, y) = (p.x - sx, p.y - sy);
        let (xp, yp) = (q.x - dx, q.y - dy);
        cos_sum += x * xp + y * yp;
        sin_sum += x * yp - y * xp;
        spread += (x * x + y * y) * (xp * xp + yp * yp);
    }
    let yaw = if corrs.len() < 2 || spread <= 1e-24 || (cos_sum == 0.0 && sin_sum == 0.0) {
        0.0
    } else {
        sin_sum.atan2(cos_sum)
    };
    let (s, c) = yaw.sin_cos();
    let tx = dx - (c * sx - s * sy);
    let ty = dy - (s * sx + c * sy);
    Ok(GroundTransform::new(tx, ty, yaw))
}

fn truncated_objective(corrs: &[Correspondence], n_src: usize, radius: f64) -> f64 {
    let r2 = radius * radius;
    let inlier: f64 = corrs.iter().map(|c| c.distance * c.distance).sum();
    (inlier + (n_src - corrs.len()) as f64 * r2) / n_src as f64
}

fn rmse(corrs: &[Correspondence]) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    (corrs.iter().map(|c| c.distance * c.distance).sum::<f64>() / corrs.len() as f64).sqrt()
}

/// Translation that moves the source centroid onto the destination centroid.
pub fn centroid_init(src: &PointCloud, dst: &PointCloud) -> Result<GroundTransform, IcpError> {
    let a = src.centroid().map_err(|_| IcpError::EmptyInput)?;
    let b = dst.centroid().map_err(|_| IcpError::EmptyInput)?;
    Ok(GroundTransform::translation(b.x - a.x, b.y - a.y))
}

pub fn icp_p2p(
    src: &PointCloud,
    dst: &PointCloud,
    cfg: &IcpConfig,
    init: Option<GroundTransform>,
) -> Result<IcpResult, IcpError> {
    cfg.validate()?;
    let index = build_index(dst)?;
    if src.is_empty() {
        return Err(IcpError::EmptyInput);
    }
    icp_with_index(src, dst, &index, cfg, init)
}

/// Same as [`icp_p2p`] with a prebuilt destination index.
pub fn icp_with_index(
    src: &PointCloud,
    dst: &PointCloud,
    index: &KdTree,
    cfg: &IcpConfig,
    init: Option<GroundTransform>,
) -> Result<IcpResult, IcpError> {
    let init = match init {
        Some(t) => t,
        None => centroid_init(src, dst)?,
    };
    let n = src.len();
    let mut current = init;
    let mut corrs = match_points(&current.apply_unchecked(src), index, cfg.radius);
    if corrs.is_empty() {
        return Ok(IcpResult {
            transform: init,
            iterations: 0,
            inlier_count: 0,
            inlier_rmse: 0.0,
            converged: false,
            objective_history: vec![truncated_objective(&corrs, n, cfg.radius)],
        });
    }
    let mut objective = truncated_objective(&corrs, n, cfg.radius);
    let mut history = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let candidate = solve_ground_alignment(&corrs, src, dst)?;
        let moved = candidate.apply_unchecked(src);
        let next = match_points(&moved, index, cfg.radius);
        let next_objective = truncated_objective(&next, n, cfg.radius);
        // Only reachable through rounding at the optimum.
        if next_objective > objective {
            converged = true;
            break;
        }
        let dt = ((candidate.tx - current.tx).powi(2) + (candidate.ty - current.ty).powi(2)).sqrt();
        let dyaw = normalize_angle(candidate.yaw - current.yaw).abs();
        current = candidate;
        corrs = next;
        objective = next_objective;
        history.push(objective);
        if dt < cfg.eps_translation && dyaw < cfg.eps_yaw {
            converged = true;
            break;
        }
        if corrs.is_empty() {
            break;
        }
    }

    Ok(IcpResult {
        transform: current,
        iterations,
        inlier_count: corrs.len(),
        inlier_rmse: rmse(&corrs),
        converged,
        objective_history: history,
    })
}
