use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{GroundTransform, Point3, PointCloud};

use super::lidar::{add_noise, cast_scan, LidarConfig, Placement};
use super::mesh::{load_mesh, normalize_mesh, person_mesh, CarShape, Mesh};
use super::SynthError;

pub const RESAMPLE_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub dist_min: f64,
    pub dist_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_pair_offset: f64,
    pub max_rel_yaw: f64,
    pub min_points_per_scan: usize,
    pub seed: u64,
    /// Apply range-dependent sensor noise to the scans.
    pub noise: bool,
    /// Optional class mixture, e.g. `{car = 0.8, person = 0.2}`. Empty means
    /// every mesh in the pool is equally likely.
    pub class_probabilities: BTreeMap<String, f64>,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            dist_min: 2.0,
            dist_max: 80.0,
            scale_min: 2.5,
            scale_max: 4.5,
            max_pair_offset: 1.0,
            max_rel_yaw: FRAC_PI_2,
            min_points_per_scan: 16,
            seed: 0,
            noise: true,
            class_probabilities: BTreeMap::new(),
            train_count: 8000,
            val_count: 1000,
            test_count: 1000,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if !(self.dist_min > 0.0 && self.dist_min < self.dist_max) {
            return bad("need 0 < dist_min < dist_max");
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return bad("need 0 < scale_min <= scale_max");
        }
        if !(self.max_pair_offset >= 0.0) || !(self.max_rel_yaw >= 0.0) {
            return bad("max_pair_offset and max_rel_yaw must be non-negative");
        }
        if self.class_probabilities.values().any(|&p| !(p >= 0.0)) {
            return bad("class probabilities must be non-negative");
        }
        Ok(())
    }
}

/// A pair of partial scans of one object plus ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub cloud1: PointCloud,
    pub cloud2: PointCloud,
    /// Maps cloud-1 points onto the object's pose in cloud 2.
    pub gt: GroundTransform,
    pub center1: Point3,
    pub center2: Point3,
    pub heading1: f64,
    pub heading2: f64,
    /// Ground distance of `center1` from the sensor.
    pub distance_d: f64,
    pub class_label: String,
    pub mesh_id: String,
}

/// One normalized mesh available for scene generation.
#[derive(Debug, Clone)]
pub struct MeshEntry {
    pub id: String,
    pub class_label: String,
    pub mesh: Mesh,
    /// Overrides the scene's scale range for this mesh (e.g. persons).
    pub scale_range: Option<(f64, f64)>,
}

impl MeshEntry {
    pub fn new(id: impl Into<String>, class_label: impl Into<String>, mesh: &Mesh) -> Result<Self, SynthError> {
        Ok(Self { id: id.into(), class_label: class_label.into(), mesh: normalize_mesh(mesh)?, scale_range: None })
    }
}

/// Procedurally generated car meshes with randomized proportions, heading +x.
pub fn procedural_cars(count: usize, seed: u64) -> Vec<MeshEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let shape = CarShape {
                length: rng.random_range(3.8..5.0),
                width: rng.random_range(1.6..2.0),
                body_height: rng.random_range(0.55..0.9),
                cabin_height: rng.random_range(0.4..0.8),
                cabin_length: rng.random_range(1.6..2.8),
                cabin_offset: rng.random_range(-0.15..0.05),
                clearance: rng.random_range(0.12..0.3),
            };
            MeshEntry::new(format!("car_{i:04}"), "car", &shape.build()).expect("procedural car is valid")
        })
        .collect()
}

/// Procedural person meshes with a 1.6–2 m scale range.
pub fn procedural_persons(count: usize) -> Vec<MeshEntry> {
    (0..count)
        .map(|i| {
            let m = person_mesh();
            let mut e = MeshEntry::new(format!("person_{i:04}"), "person", &m).expect("procedural person is valid");
            e.scale_range = Some((1.6, 2.0));
            e
        })
        .collect()
}

/// Parses an orientation-fix table (`mesh_id,yaw_correction` per line; yaw in
/// radians). A header line is skipped if its second column is not numeric.
pub fn read_orientation_fixes(path: &Path) -> Result<BTreeMap<String, f64>, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(id), Some(yaw)) = (cols.next(), cols.next()) else {
            return Err(SynthError::Parse { line: i + 1, message: "expected mesh_id,yaw_correction".into() });
        };
        match yaw.parse::<f64>() {
            Ok(y) => {
                out.insert(id.to_string(), y);
            }
            Err(_) if i == 0 => {}
            Err(_) => return Err(SynthError::Parse { line: i + 1, message: format!("invalid yaw {yaw:?}") }),
        }
    }
    Ok(out)
}

/// Loads every `*.off` under a ModelNet-style tree (`<class>/<split>/*.off`).
///
/// Meshes are sorted by class and file name, rotated by their orientation fix
/// if one is given, and normalized.
pub fn load_mesh_pool(root: &Path, fixes: &BTreeMap<String, f64>) -> Result<Vec<MeshEntry>, SynthError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let io = |p: &Path| {
        let path = p.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(io(&dir))? {
            let path = entry.map_err(io(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
                let rel = path.strip_prefix(root).unwrap_or(&path);
                let class = rel.components().next().and_then(|c| c.as_os_str().to_str()).unwrap_or("object");
                let class = if rel.components().count() == 1 { "object" } else { class };
                files.push((class.to_string(), path.clone()));
            }
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|(class, path)| {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
            let mut mesh = load_mesh(&path)?;
            if let Some(&yaw) = fixes.get(&id) {
                mesh = mesh.rotated_z(yaw);
            }
            MeshEntry::new(id, class, &mesh)
        })
        .collect()
}

/// Splits a pool into disjoint halves per class: the first half of each class
/// for training, the rest for validation and testing.
pub fn split_pool(pool: &[MeshEntry]) -> (Vec<MeshEntry>, Vec<MeshEntry>) {
    let mut by_class: BTreeMap<&str, Vec<&MeshEntry>> = BTreeMap::new();
    for m in pool {
        by_class.entry(&m.class_label).or_default().push(m);
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for members in by_class.values() {
        let half = members.len().div_ceil(2);
        train.extend(members[..half].iter().map(|m| (*m).clone()));
        held.extend(members[half..].iter().map(|m| (*m).clone()));
    }
    (train, held)
}

fn pick_mesh<'a, R: Rng>(pool: &'a [MeshEntry], cfg: &SceneConfig, rng: &mut R) -> &'a MeshEntry {
    let weighted: Vec<(&String, f64)> = cfg
        .class_probabilities
        .iter()
        .filter(|(c, &p)| p > 0.0 && pool.iter().any(|m| &m.class_label == *c))
        .map(|(c, &p)| (c, p))
        .collect();
    if !weighted.is_empty() {
        let total: f64 = weighted.iter().map(|(_, p)| p).sum();
        let mut u = rng.random_range(0.0..total);
        let mut class = weighted[weighted.len() - 1].0;
        for (c, p) in &weighted {
            if u < *p {
                class = c;
                break;
            }
            u -= p;
        }
        let members: Vec<&MeshEntry> = pool.iter().filter(|m| &m.class_label == class).collect();
        return members[rng.random_range(0..members.len())];
    }
    &pool[rng.random_range(0..pool.len())]
}

fn quantize(cloud: PointCloud) -> PointCloud {
    cloud.points.into_iter().map(Point3::to_f32_precision).collect()
}

/// Generates one scene.
///
/// The mesh and the distance of the first placement are drawn once; if either
/// scan ends up with too few points, the remaining pose parameters are
/// redrawn, which keeps the distance distribution exactly uniform.
pub fn sample_scene<R: Rng>(
    pool: &[MeshEntry],
    cfg: &SceneConfig,
    lidar: &LidarConfig,
    rng: &mut R,
) -> Result<SceneSample, SynthError> {
    if pool.is_empty() {
        return Err(SynthError::EmptyPool);
    }
    let entry = pick_mesh(pool, cfg, rng);
    let d = rng.random_range(cfg.dist_min..=cfg.dist_max);
    let (smin, smax) = entry.scale_range.unwrap_or((cfg.scale_min, cfg.scale_max));

    for _ in 0..RESAMPLE_RETRIES {
        let azimuth = rng.random_range(0.0..TAU);
        let heading = rng.random_range(0.0..TAU);
        let scale = if smax > smin { rng.random_range(smin..smax) } else { smin };
        let r = cfg.max_pair_offset * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..TAU);
        let rel_yaw = if cfg.max_rel_yaw > 0.0 { rng.random_range(-cfg.max_rel_yaw..=cfg.max_rel_yaw) } else { 0.0 };

        let pose1 = GroundTransform::new(d * azimuth.cos(), d * azimuth.sin(), heading);
        let pose2 = GroundTransform::new(pose1.tx + r * theta.cos(), pose1.ty + r * theta.sin(), heading + rel_yaw);
        let p1 = Placement { pose: pose1, scale };
        let p2 = Placement { pose: pose2, scale };

        let scan1 = cast_scan(&entry.mesh, &p1, lidar)?;
        let scan2 = cast_scan(&entry.mesh, &p2, lidar)?;
        if scan1.len() < cfg.min_points_per_scan.max(1) || scan2.len() < cfg.min_points_per_scan.max(1) {
            continue;
        }
        let center1 = p1.center(&entry.mesh, lidar);
        let center2 = p2.center(&entry.mesh, lidar);
        let (cloud1, cloud2) = if cfg.noise {
            let d1 = center1.x.hypot(center1.y);
            let d2 = center2.x.hypot(center2.y);
            let n1 = add_noise(&scan1, d1, rng);
            (n1, add_noise(&scan2, d2, rng))
        } else {
            (scan1, scan2)
        };
        return Ok(SceneSample {
            cloud1: quantize(cloud1),
            cloud2: quantize(cloud2),
            gt: pose2.compose(&pose1.invert()),
            center1,
            center2,
            heading1: pose1.yaw,
            heading2: pose2.yaw,
            distance_d: center1.x.hypot(center1.y),
            class_label: entry.class_label.clone(),
            mesh_id: entry.id.clone(),
        });
    }
    Err(SynthError::RetriesExhausted { mesh_id: entry.id.clone(), retries: RESAMPLE_RETRIES })
}

/// Deterministic per-scene random stream derived from `(seed, index)`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates `count` scenes in parallel. Output order follows the scene index.
pub fn generate_scenes(
    pool: &[MeshEntry],
    cfg: &SceneConfig,
    lidar: &LidarConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<SceneSample>, SynthError> {
    cfg.validate()?;
    lidar.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| sample_scene(pool, cfg, lidar, &mut scene_rng(seed, i as u64)))
        .collect()
}
