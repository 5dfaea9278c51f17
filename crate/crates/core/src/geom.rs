//! Ground-plane rigid transforms and point containers.
//!
//! The z-axis points up and the ground plane is the xy-plane. A
//! [`GroundTransform`] acts on a point by rotating it about the z-axis and then
//! translating it in the plane; z is never touched.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("point cloud is empty")]
    EmptyInput,
    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let d = *self - *other;
        d.dot(&d)
    }

    /// Planar (xy) distance, ignoring height.
    pub fn ground_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rounds every coordinate to the nearest 32-bit float.
    pub fn to_f32_precision(self) -> Point3 {
        Point3::new(self.x as f32 as f64, self.y as f32 as f64, self.z as f32 as f64)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    /// Builds a cloud and rejects non-finite coordinates.
    pub fn try_new(points: Vec<Point3>) -> Result<Self, GeomError> {
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeomError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Result<Point3, GeomError> {
        if self.points.is_empty() {
            return Err(GeomError::EmptyInput);
        }
        let n = self.points.len() as f64;
        let sum = self.points.iter().fold(Point3::ORIGIN, |acc, p| acc + *p);
        Ok(sum * (1.0 / n))
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        Self { points: iter.into_iter().collect() }
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid can return TAU itself for tiny negative inputs
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Rigid motion restricted to the ground plane: xy-translation plus yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTransform {
    pub tx: f64,
    pub ty: f64,
    pub yaw: f64,
}

impl Default for GroundTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl GroundTransform {
    pub const IDENTITY: GroundTransform = GroundTransform { tx: 0.0, ty: 0.0, yaw: 0.0 };

    /// Creates a transform with the yaw wrapped into (−π, π].
    pub fn new(tx: f64, ty: f64, yaw: f64) -> Self {
        Self { tx, ty, yaw: normalize_angle(yaw) }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(tx, ty, 0.0)
    }

    pub fn rotation(yaw: f64) -> Self {
        Self::new(0.0, 0.0, yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.tx.is_finite() && self.ty.is_finite() && self.yaw.is_finite()
    }

    #[inline]
    pub fn apply_point(&self, p: &Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty, p.z)
    }

    /// Planar action on an (x, y) pair.
    #[inline]
    pub fn apply_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    /// Transforms every point of a nonempty cloud, preserving order.
    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud, GeomError> {
        if cloud.is_empty() {
            return Err(GeomError::EmptyInput);
        }
        Ok(self.apply_unchecked(cloud))
    }

    pub(crate) fn apply_unchecked(&self, cloud: &PointCloud) -> PointCloud {
        let (s, c) = self.yaw.sin_cos();
        cloud
            .points
            .iter()
            .map(|p| Point3::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty, p.z))
            .collect()
    }

    /// `self ∘ other`: applying the result equals applying `other`, then `self`.
    pub fn compose(&self, other: &GroundTransform) -> GroundTransform {
        let (tx, ty) = self.apply_xy(other.tx, other.ty);
        GroundTransform::new(tx, ty, self.yaw + other.yaw)
    }

    pub fn invert(&self) -> GroundTransform {
        let (s, c) = self.yaw.sin_cos();
        GroundTransform::new(-(c * self.tx + s * self.ty), s * self.tx - c * self.ty, -self.yaw)
    }

    /// Row-major 3×3 homogeneous matrix of the planar action.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.yaw.sin_cos();
        [[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]]
    }

    pub fn translation_norm(&self) -> f64 {
        self.tx.hypot(self.ty)
    }
}

impl Mul for GroundTransform {
    type Output = GroundTransform;
    fn mul(self, rhs: GroundTransform) -> GroundTransform {
        self.compose(&rhs)
    }
}

/// Free-function form of [`GroundTransform::apply`].
pub fn apply(t: &GroundTransform, cloud: &PointCloud) -> Result<PointCloud, GeomError> {
    t.apply(cloud)
}

pub fn compose(a: &GroundTransform, b: &GroundTransform) -> GroundTransform {
    a.compose(b)
}

pub fn invert(t: &GroundTransform) -> GroundTransform {
    t.invert()
}

/// Absolute angular difference between two yaws.
///
/// With `axis_symmetric`, headings that differ by π are equivalent, so the
/// deviation is measured to the orientation axis and lies in [0, π/2];
/// otherwise it lies in [0, π].
pub fn angle_deviation(pred_yaw: f64, gt_yaw: f64, axis_symmetric: bool) -> f64 {
    let d = normalize_angle(pred_yaw - gt_yaw).abs();
    if axis_symmetric {
        d.min(PI - d)
    } else {
        d
    }
}

/// Resolves the heading-axis ambiguity under the assumption that the true
/// relative rotation is smaller than 90°.
pub fn flip_heading_if_needed(pred: &GroundTransform) -> GroundTransform {
    let yaw = normalize_angle(pred.yaw);
    if yaw.abs() > FRAC_PI_2 {
        GroundTransform::new(pred.tx, pred.ty, yaw - yaw.signum() * PI)
    } else {
        GroundTransform { yaw, ..*pred }
    }
}
