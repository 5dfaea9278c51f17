//! Relative-motion estimation between two partial LiDAR scans of one object.
//!
//! - [`geom`]: ground-plane transforms and point clouds.
//! - [`synth`]: simulated scan pairs and the dataset format.
//! - [`icp`]: ground-constrained point-to-point ICP.
//! - [`autodiff`]: a small tensor library with reverse-mode gradients.
//! - [`alignnet`]: the siamese canonical-pose alignment network and its loss.
//! - [`harness`]: training, evaluation, timing and the command line.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignnet;
pub mod autodiff;
pub mod geom;
pub mod harness;
pub mod icp;
pub mod synth;

pub use geom::{GroundTransform, Point3, PointCloud};
