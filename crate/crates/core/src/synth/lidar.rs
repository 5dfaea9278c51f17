use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{GroundTransform, Point3, PointCloud};

use super::mesh::{Aabb, Mesh};
use super::SynthError;

pub const BEAM_COUNT: usize = 64;

/// Spinning multi-beam scanner. The sensor sits at the origin of the sensor
/// frame; the ground plane is `z = -sensor_height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub sensor_height: f64,
    /// Beam elevations in radians, strictly decreasing.
    pub vertical_angles: Vec<f64>,
    pub azimuth_step: f64,
    pub max_range: f64,
}

impl Default for LidarConfig {
    /// HDL-64E-like layout: 64 beams from +2.0° down to −24.8°, 0.1728°
    /// azimuth resolution, mounted 1.73 m above the ground.
    fn default() -> Self {
        let top = 2.0f64.to_radians();
        let bottom = (-24.8f64).to_radians();
        let vertical_angles = (0..BEAM_COUNT)
            .map(|i| top + (bottom - top) * i as f64 / (BEAM_COUNT - 1) as f64)
            .collect();
        Self { sensor_height: 1.73, vertical_angles, azimuth_step: 0.1728f64.to_radians(), max_range: 120.0 }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.vertical_angles.len() != BEAM_COUNT {
            return bad("lidar needs exactly 64 vertical angles");
        }
        if self.vertical_angles.windows(2).any(|w| !(w[0] > w[1])) {
            return bad("vertical angles must be strictly decreasing");
        }
        if !(self.azimuth_step > 0.0) {
            return bad("azimuth_step must be positive");
        }
        if !(self.max_range > 0.0) {
            return bad("max_range must be positive");
        }
        if !self.sensor_height.is_finite() {
            return bad("sensor_height must be finite");
        }
        Ok(())
    }

    /// Number of azimuth columns in one revolution.
    pub fn azimuth_count(&self) -> usize {
        (TAU / self.azimuth_step).ceil() as usize
    }

    pub fn ray_direction(&self, elevation: f64, azimuth: f64) -> Point3 {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Point3::new(ce * ca, ce * sa, se)
    }
}

/// Where a mesh is put in the scene: a ground pose (mesh origin → sensor
/// frame) and a uniform scale. The scaled mesh is lifted so its lowest point
/// rests on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub pose: GroundTransform,
    pub scale: f64,
}

impl Placement {
    fn lift(&self, mesh: &Mesh, lidar: &LidarConfig) -> f64 {
        let zmin = mesh.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        -lidar.sensor_height - self.scale * zmin
    }

    /// Sensor-frame position of the mesh origin (the amodal object center).
    pub fn center(&self, mesh: &Mesh, lidar: &LidarConfig) -> Point3 {
        Point3::new(self.pose.tx, self.pose.ty, self.lift(mesh, lidar))
    }

    /// Maps a mesh-local point into the sensor frame.
    pub fn to_sensor(&self, p: &Point3, lift: f64) -> Point3 {
        let q = self.pose.apply_point(&(*p * self.scale));
        Point3::new(q.x, q.y, q.z + lift)
    }

    /// Inverse of [`Placement::to_sensor`].
    pub fn to_local(&self, p: &Point3, lift: f64) -> Point3 {
        let q = self.pose.invert().apply_point(&Point3::new(p.x, p.y, p.z - lift));
        q * (1.0 / self.scale)
    }

    pub fn placed_mesh(&self, mesh: &Mesh, lidar: &LidarConfig) -> Mesh {
        let lift = self.lift(mesh, lidar);
        Mesh { vertices: mesh.vertices.iter().map(|v| self.to_sensor(v, lift)).collect(), faces: mesh.faces.clone() }
    }
}

struct Ray {
    origin: Point3,
    dir: Point3,
    inv: Point3,
}

/// Möller–Trumbore ray/triangle test. Returns the ray parameter of the hit.
pub fn ray_triangle(origin: &Point3, dir: &Point3, tri: &[Point3; 3]) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = *origin - tri[0];
    let u = s.dot(&p) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    (t > 1e-9).then_some(t)
}

enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Bounding volume hierarchy over the triangles of a mesh.
pub struct Bvh {
    nodes: Vec<BvhNode>,
    tris: Vec<[Point3; 3]>,
}

impl Bvh {
    const LEAF_SIZE: usize = 4;

    pub fn build(mesh: &Mesh) -> Self {
        let mut tris: Vec<[Point3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / Self::LEAF_SIZE + 1);
        let n = tris.len();
        Self::build_range(&mut nodes, &mut tris, 0, n);
        Bvh { nodes, tris }
    }

    fn tri_bounds(t: &[Point3; 3]) -> Aabb {
        let mut b = Aabb::empty();
        t.iter().for_each(|p| b.grow(p));
        b
    }

    fn build_range(nodes: &mut Vec<BvhNode>, tris: &mut [[Point3; 3]], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for t in &tris[start..end] {
            let b = Self::tri_bounds(t);
            bounds.grow(&b.min);
            bounds.grow(&b.max);
            cbounds.grow(&((t[0] + t[1] + t[2]) * (1.0 / 3.0)));
        }
        let id = nodes.len();
        if end - start <= Self::LEAF_SIZE {
            nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        nodes.push(BvhNode::Leaf { bounds, start, end });
        let e = cbounds.extent();
        let axis = if e.x >= e.y && e.x >= e.z { 0 } else if e.y >= e.z { 1 } else { 2 };
        let key = |t: &[Point3; 3]| {
            let c = t[0] + t[1] + t[2];
            match axis {
                0 => c.x,
                1 => c.y,
                _ => c.z,
            }
        };
        let mid = start + (end - start) / 2;
        tris[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
        let left = Self::build_range(nodes, tris, start, mid);
        let right = Self::build_range(nodes, tris, mid, end);
        nodes[id] = BvhNode::Inner { bounds, left, right };
        id
    }

    fn slab(b: &Aabb, ray: &Ray, t_max: f64) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for (o, inv, lo, hi) in [
            (ray.origin.x, ray.inv.x, b.min.x, b.max.x),
            (ray.origin.y, ray.inv.y, b.min.y, b.max.y),
            (ray.origin.z, ray.inv.z, b.min.z, b.max.z),
        ] {
            let mut ta = (lo - o) * inv;
            let mut tb = (hi - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf means the ray lies on the slab boundary
            if ta.is_nan() || tb.is_nan() {
                continue;
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
        true
    }

    /// Nearest hit parameter along the ray, if any within `t_max`.
    pub fn intersect(&self, origin: Point3, dir: Point3, t_max: f64) -> Option<f64> {
        let ray = Ray { origin, dir, inv: Point3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z) };
        let mut best = t_max;
        let mut hit = false;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                BvhNode::Leaf { bounds, start, end } => {
                    if !Self::slab(bounds, &ray, best) {
                        continue;
                    }
                    for tri in &self.tris[*start..*end] {
                        if let Some(t) = ray_triangle(&ray.origin, &ray.dir, tri) {
                            if t < best {
                                best = t;
                                hit = true;
                            }
                        }
                    }
                }
                BvhNode::Inner { bounds, left, right } => {
                    if Self::slab(bounds, &ray, best) {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        hit.then_some(best)
    }
}

/// Simulates one sweep of the scanner against a placed mesh.
///
/// Returns the nearest intersection of every ray that hits, in the sensor
/// frame. Only rays inside the angular window covering the object's bounding
/// sphere are traced.
pub fn cast_scan(mesh: &Mesh, placement: &Placement, lidar: &LidarConfig) -> Result<PointCloud, SynthError> {
    if !(placement.scale > 0.0) {
        return Err(SynthError::Config("scale must be positive".into()));
    }
    let placed = placement.placed_mesh(mesh, lidar);
    Ok(cast_placed(&placed, lidar))
}

/// Ray-casts a mesh that is already expressed in the sensor frame.
pub fn cast_placed(placed: &Mesh, lidar: &LidarConfig) -> PointCloud {
    let bvh = Bvh::build(placed);
    let bounds = placed.bounds();
    let center = bounds.center();
    let radius = bounds.extent().norm() / 2.0;

    let dxy = center.x.hypot(center.y);
    let d3 = center.norm();
    let count = lidar.azimuth_count();

    let azimuths: Vec<usize> = if radius >= dxy {
        (0..count).collect()
    } else {
        let phi_c = center.y.atan2(center.x);
        let half = (radius / dxy).asin() + lidar.azimuth_step;
        let k0 = ((phi_c - half) / lidar.azimuth_step).floor() as i64;
        let k1 = ((phi_c + half) / lidar.azimuth_step).ceil() as i64;
        let mut ks: Vec<usize> = (k0..=k1).map(|k| k.rem_euclid(count as i64) as usize).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };
    let (el_lo, el_hi) = if radius >= d3 {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let el_c = center.z.atan2(dxy);
        let half = (radius / d3).asin() + 1e-6;
        (el_c - half, el_c + half)
    };

    let mut points = Vec::new();
    for &el in lidar.vertical_angles.iter().filter(|&&e| e >= el_lo && e <= el_hi) {
        for &k in &azimuths {
            let dir = lidar.ray_direction(el, k as f64 * lidar.azimuth_step);
            if let Some(t) = bvh.intersect(Point3::ORIGIN, dir, lidar.max_range) {
                points.push(dir * t);
            }
        }
    }
    PointCloud::new(points)
}

/// Standard deviation of the range-dependent sensor noise at ground distance `d`.
pub fn noise_sigma(d: f64) -> f64 {
    (0.05 * d / 80.0).max(0.005)
}

pub const NOISE_CLIP: f64 = 0.05;

/// Perturbs every coordinate by a clipped zero-mean Gaussian whose spread
/// grows with the distance `d` of the object from the sensor.
pub fn add_noise<R: Rng + ?Sized>(cloud: &PointCloud, d: f64, rng: &mut R) -> PointCloud {
    let normal = Normal::new(0.0, noise_sigma(d.max(0.0))).expect("finite sigma");
    let mut jitter = || normal.sample(rng).clamp(-NOISE_CLIP, NOISE_CLIP);
    cloud
        .iter()
        .map(|p| {
            let dx = jitter();
            let dy = jitter();
            let dz = jitter();
            Point3::new(p.x + dx, p.y + dy, p.z + dz)
        })
        .collect()
}
