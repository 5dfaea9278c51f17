use crate::geom::{Point3, PointCloud};

use super::IcpError;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Static 3D kd-tree over the points of a cloud.
///
/// Indices returned by queries refer to positions in the original cloud.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn coord(p: &Point3, axis: u8) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self, IcpError> {
        if cloud.is_empty() {
            return Err(IcpError::EmptyInput);
        }
        let points = cloud.points.clone();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = order.len();
        Self::build_node(&points, &mut order, &mut nodes, 0, n);
        Ok(Self { points, order, nodes })
    }

    fn build_node(points: &[Point3], order: &mut [u32], nodes: &mut Vec<Node>, start: usize, end: usize) -> u32 {
        let id = nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for &i in &order[start..end] {
            let p = &points[i as usize];
            for a in 0..3u8 {
                lo[a as usize] = lo[a as usize].min(coord(p, a));
                hi[a as usize] = hi[a as usize].max(coord(p, a));
            }
        }
        let axis = (0..3u8).max_by(|&a, &b| (hi[a as usize] - lo[a as usize]).total_cmp(&(hi[b as usize] - lo[b as usize]))).unwrap();
        if hi[axis as usize] - lo[axis as usize] <= 0.0 {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(&points[a as usize], axis).total_cmp(&coord(&points[b as usize], axis))
        });
        let value = coord(&points[order[mid] as usize], axis);
        nodes.push(Node::Leaf { start, end });
        let left = Self::build_node(points, order, nodes, start, mid);
        let right = Self::build_node(points, order, nodes, mid, end);
        nodes[id as usize] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Point3 {
        &self.points[index]
    }

    /// Indices of all points within `radius` (inclusive), in ascending order.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            match &self.nodes[id as usize] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[*start..*end] {
                        if self.points[i as usize].distance_squared(query) <= r2 {
                            out.push(i as usize);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let d = coord(query, *axis) - value;
                    if d <= radius {
                        stack.push(*left);
                    }
                    if d >= -radius {
                        stack.push(*right);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Nearest point within `radius`, as `(index, squared distance)`.
    /// Equidistant candidates resolve to the lowest index.
    pub fn nearest_within(&self, query: &Point3, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut bound = radius * radius;
        self.nearest_rec(0, query, &mut best, &mut bound);
        best
    }

    fn nearest_rec(&self, id: u32, query: &Point3, best: &mut Option<(usize, f64)>, bound: &mut f64) {
        match &self.nodes[id as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = self.points[i as usize].distance_squared(query);
                    let better = match *best {
                        None => d2 <= *bound,
                        Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                    };
                    if better {
                        *best = Some((i as usize, d2));
                        *bound = d2;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = coord(query, *axis) - value;
                let (near, far) = if d <= 0.0 { (*left, *right) } else { (*right, *left) };
                self.nearest_rec(near, query, best, bound);
                // `<=` keeps equidistant points on the far side reachable for tie-breaking.
                if d * d <= *bound {
                    self.nearest_rec(far, query, best, bound);
                }
            }
        }
    }
}
