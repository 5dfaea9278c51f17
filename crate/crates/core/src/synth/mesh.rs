use std::f64::consts::{PI, TAU};
use std::path::Path;

use crate::geom::Point3;

use super::SynthError;

/// Triangle mesh. Faces index into `vertices`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Point3) {
        self.min = Point3::new(self.min.x.min(p.x), self.min.y.min(p.y), self.min.z.min(p.z));
        self.max = Point3::new(self.max.x.max(p.x), self.max.y.max(p.y), self.max.z.max(p.z));
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }
}

impl Mesh {
    /// Validates indices, face count and finiteness.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self, SynthError> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(SynthError::EmptyMesh);
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(SynthError::InvalidMesh("non-finite vertex".into()));
        }
        let n = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(SynthError::InvalidMesh(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for v in &self.vertices {
            b.grow(v);
        }
        b
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn vertex_centroid(&self) -> Point3 {
        let sum = self.vertices.iter().fold(Point3::ORIGIN, |acc, v| acc + *v);
        sum * (1.0 / self.vertices.len() as f64)
    }

    /// Rotates all vertices about the z-axis.
    pub fn rotated_z(&self, yaw: f64) -> Mesh {
        let (s, c) = yaw.sin_cos();
        Mesh {
            vertices: self.vertices.iter().map(|v| Point3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Reads an OFF mesh from disk. Polygonal faces are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, SynthError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
    parse_off(&text)
}

/// Parses OFF text.
///
/// Accepts the ModelNet quirk where the header and counts share a line
/// (`OFF1234 5678 0`). Comment lines start with `#`.
pub fn parse_off(text: &str) -> Result<Mesh, SynthError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let err = |line: usize, message: &str| SynthError::Parse { line, message: message.to_string() };

    let (first_no, first) = lines.next().ok_or_else(|| err(1, "missing OFF header"))?;
    let rest = first.strip_prefix("OFF").ok_or_else(|| err(first_no, "expected OFF header"))?;
    let (counts_no, counts) = if rest.trim().is_empty() {
        lines.next().ok_or_else(|| err(first_no + 1, "missing element counts"))?
    } else {
        (first_no, rest.trim())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| err(counts_no, "invalid element counts"))?;
    if counts.len() < 2 {
        return Err(err(counts_no, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, line) = lines.next().ok_or_else(|| err(counts_no, "unexpected end of file in vertex list"))?;
        let coords: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(no, "invalid vertex coordinate"))?;
        if coords.len() != 3 {
            return Err(err(no, "vertex needs three coordinates"));
        }
        let v = Point3::new(coords[0], coords[1], coords[2]);
        if !v.is_finite() {
            return Err(err(no, "non-finite vertex coordinate"));
        }
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, line) = lines.next().ok_or_else(|| err(counts_no, "unexpected end of file in face list"))?;
        let mut tokens = line.split_whitespace();
        let k: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(no, "invalid face vertex count"))?;
        let idx: Vec<u32> = tokens
            .take(k)
            .map(|t| t.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(no, "invalid face index"))?;
        if idx.len() != k || k < 3 {
            return Err(err(no, "face needs at least three indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= nv) {
            return Err(err(no, &format!("face index {bad} out of range")));
        }
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }

    Mesh::new(vertices, faces)
}

/// Moves the vertex centroid to the origin and scales uniformly so the largest
/// axis-aligned extent is 1.
pub fn normalize_mesh(mesh: &Mesh) -> Result<Mesh, SynthError> {
    if mesh.vertices.is_empty() {
        return Err(SynthError::EmptyMesh);
    }
    let e = mesh.bounds().extent();
    let max_extent = e.x.max(e.y).max(e.z);
    if !(max_extent > 0.0) {
        return Err(SynthError::DegenerateMesh);
    }
    let c = mesh.vertex_centroid();
    let s = 1.0 / max_extent;
    Ok(Mesh {
        vertices: mesh.vertices.iter().map(|v| (*v - c) * s).collect(),
        faces: mesh.faces.clone(),
    })
}

/// Closed axis-aligned box centered at the origin.
pub fn box_mesh(sx: f64, sy: f64, sz: f64) -> Mesh {
    box_at(Point3::ORIGIN, sx, sy, sz)
}

fn box_at(center: Point3, sx: f64, sy: f64, sz: f64) -> Mesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        let x = if i & 1 == 0 { -hx } else { hx };
        let y = if i & 2 == 0 { -hy } else { hy };
        let z = if i & 4 == 0 { -hz } else { hz };
        vertices.push(center + Point3::new(x, y, z));
    }
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    Mesh { vertices, faces }
}

fn merge(parts: &[Mesh]) -> Mesh {
    let mut out = Mesh { vertices: Vec::new(), faces: Vec::new() };
    for p in parts {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&p.vertices);
        out.faces.extend(p.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
    out
}

/// UV sphere of the given radius centered at the origin.
pub fn sphere_mesh(radius: f64, rings: usize, segments: usize) -> Mesh {
    let rings = rings.max(2);
    let segments = segments.max(3);
    let mut vertices = vec![Point3::new(0.0, 0.0, radius)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            vertices.push(Point3::new(radius * theta.sin() * phi.cos(), radius * theta.sin() * phi.sin(), radius * theta.cos()));
        }
    }
    vertices.push(Point3::new(0.0, 0.0, -radius));
    let bottom = (vertices.len() - 1) as u32;
    let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
        faces.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    Mesh { vertices, faces }
}

/// Vertical rectangle in the plane x = 0, spanning y ∈ [−w/2, w/2] and
/// z ∈ [0, h].
pub fn wall_mesh(width: f64, height: f64) -> Mesh {
    let hw = width / 2.0;
    Mesh {
        vertices: vec![
            Point3::new(0.0, -hw, 0.0),
            Point3::new(0.0, hw, 0.0),
            Point3::new(0.0, hw, height),
            Point3::new(0.0, -hw, height),
        ],
        faces: vec![[0, 1, 2], [0, 2, 3]],
    }
}

/// Proportions of a procedural car: a body slab with a cabin on top and four
/// wheel blocks. Lengths are relative; the mesh is normalized afterwards.
#[derive(Debug, Clone, Copy)]
pub struct CarShape {
    pub length: f64,
    pub width: f64,
    pub body_height: f64,
    pub cabin_height: f64,
    pub cabin_length: f64,
    /// Cabin center offset along the heading axis, relative to length.
    pub cabin_offset: f64,
    pub clearance: f64,
}

impl Default for CarShape {
    fn default() -> Self {
        Self {
            length: 4.4,
            width: 1.8,
            body_height: 0.75,
            cabin_height: 0.6,
            cabin_length: 2.2,
            cabin_offset: -0.08,
            clearance: 0.2,
        }
    }
}

impl CarShape {
    /// Heading along +x, bottom of the wheels at z = 0.
    pub fn build(&self) -> Mesh {
        let body_z = self.clearance + self.body_height / 2.0;
        let body = box_at(Point3::new(0.0, 0.0, body_z), self.length, self.width, self.body_height);
        let cabin_z = self.clearance + self.body_height + self.cabin_height / 2.0;
        let cabin = box_at(
            Point3::new(self.cabin_offset * self.length, 0.0, cabin_z),
            self.cabin_length,
            self.width * 0.9,
            self.cabin_height,
        );
        let wheel_d = self.clearance * 2.6;
        let wx = self.length * 0.32;
        let wy = self.width / 2.0 - 0.12;
        let wheels: Vec<Mesh> = [(wx, wy), (wx, -wy), (-wx, wy), (-wx, -wy)]
            .iter()
            .map(|&(x, y)| box_at(Point3::new(x, y, wheel_d / 2.0), wheel_d, 0.24, wheel_d))
            .collect();
        let mut parts = vec![body, cabin];
        parts.extend(wheels);
        merge(&parts)
    }
}

/// A crude standing person: torso, head and two legs, facing +x.
pub fn person_mesh() -> Mesh {
    let legs = [0.1, -0.1].map(|y| box_at(Point3::new(0.0, y, 0.42), 0.18, 0.16, 0.84));
    let torso = box_at(Point3::new(0.0, 0.0, 1.14), 0.25, 0.45, 0.6);
    let head = box_at(Point3::new(0.02, 0.0, 1.58), 0.2, 0.18, 0.26);
    let nose = box_at(Point3::new(0.13, 0.0, 1.58), 0.06, 0.05, 0.05);
    merge(&[legs[0].clone(), legs[1].clone(), torso, head, nose])
}
