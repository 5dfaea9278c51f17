//! Python bindings: ground transforms, ICP, scene generation, datasets, the
//! alignment network, evaluation and the command line.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pcalign::alignnet::AlignNet;
use pcalign::geom::{self, Point3, PointCloud};
use pcalign::harness::{self, Prediction};
use pcalign::icp::{self, IcpConfig};
use pcalign::synth::{self, LidarConfig, SceneConfig, SceneSample};

type Points = Vec<[f64; 3]>;

fn cloud(points: Points) -> PointCloud {
    points.into_iter().map(|[x, y, z]| Point3::new(x, y, z)).collect()
}

fn points(c: &PointCloud) -> Points {
    c.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: harness::HarnessError) -> PyErr {
    match e {
        harness::HarnessError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Rotation about z by `yaw`, then translation by `(tx, ty)`.
#[pyclass(name = "GroundTransform", module = "pcalign_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyGroundTransform(geom::GroundTransform);

#[pymethods]
impl PyGroundTransform {
    #[new]
    #[pyo3(signature = (tx=0.0, ty=0.0, yaw=0.0))]
    fn new(tx: f64, ty: f64, yaw: f64) -> Self {
        Self(geom::GroundTransform::new(tx, ty, yaw))
    }

    #[getter]
    fn tx(&self) -> f64 {
        self.0.tx
    }

    #[getter]
    fn ty(&self) -> f64 {
        self.0.ty
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.0.yaw
    }

    /// `self ∘ other`: applies `other` first.
    fn compose(&self, other: &PyGroundTransform) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn invert(&self) -> Self {
        Self(self.0.invert())
    }

    fn apply(&self, points: Points) -> PyResult<Points> {
        Ok(self::points(&self.0.apply(&cloud(points)).map_err(value_err)?))
    }

    /// Homogeneous 3×3 matrix.
    fn matrix(&self) -> [[f64; 3]; 3] {
        self.0.to_matrix()
    }

    fn __repr__(&self) -> String {
        format!("GroundTransform(tx={}, ty={}, yaw={})", self.0.tx, self.0.ty, self.0.yaw)
    }
}

#[pyclass(name = "IcpResult", module = "pcalign_py", frozen, get_all)]
struct PyIcpResult {
    transform: PyGroundTransform,
    iterations: usize,
    inlier_count: usize,
    inlier_rmse: f64,
    converged: bool,
}

/// Ground-constrained point-to-point ICP aligning `src` onto `dst`.
#[pyfunction]
#[pyo3(signature = (src, dst, radius=0.1, max_iterations=30, init=None))]
fn icp_p2p(src: Points, dst: Points, radius: f64, max_iterations: usize, init: Option<PyGroundTransform>) -> PyResult<PyIcpResult> {
    let cfg = IcpConfig { radius, max_iterations, ..IcpConfig::default() };
    let r = icp::icp_p2p(&cloud(src), &cloud(dst), &cfg, init.map(|t| t.0)).map_err(value_err)?;
    Ok(PyIcpResult {
        transform: PyGroundTransform(r.transform),
        iterations: r.iterations,
        inlier_count: r.inlier_count,
        inlier_rmse: r.inlier_rmse,
        converged: r.converged,
    })
}

/// Sensor noise standard deviation at ground distance `d` meters.
#[pyfunction]
fn noise_sigma(d: f64) -> f64 {
    synth::noise_sigma(d)
}

/// One simulated pair of scans with its ground truth.
#[pyclass(name = "Scene", module = "pcalign_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyScene(SceneSample);

#[pymethods]
impl PyScene {
    #[getter]
    fn cloud1(&self) -> Points {
        points(&self.0.cloud1)
    }

    #[getter]
    fn cloud2(&self) -> Points {
        points(&self.0.cloud2)
    }

    /// Maps cloud 1 onto the object's pose in cloud 2.
    #[getter]
    fn gt(&self) -> PyGroundTransform {
        PyGroundTransform(self.0.gt)
    }

    #[getter]
    fn distance_d(&self) -> f64 {
        self.0.distance_d
    }

    #[getter]
    fn class_label(&self) -> String {
        self.0.class_label.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({} points, {} points, d={:.1} m, {})",
            self.0.cloud1.len(),
            self.0.cloud2.len(),
            self.0.distance_d,
            self.0.class_label
        )
    }
}

/// Scenes of procedural cars, reproducible from `seed`.
#[pyfunction]
#[pyo3(signature = (count, seed=0, noise=true, cars=8))]
fn generate_scenes(py: Python<'_>, count: usize, seed: u64, noise: bool, cars: usize) -> PyResult<Vec<PyScene>> {
    let cfg = SceneConfig { noise, ..SceneConfig::default() };
    let pool = synth::scene::procedural_cars(cars.max(1), seed);
    let scenes = py
        .detach(|| synth::generate_scenes(&pool, &cfg, &LidarConfig::default(), seed, count))
        .map_err(value_err)?;
    Ok(scenes.into_iter().map(PyScene).collect())
}

#[pyfunction]
fn read_dataset(path: PathBuf) -> PyResult<Vec<PyScene>> {
    let s = synth::read_dataset(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(s.into_iter().map(PyScene).collect())
}

#[pyfunction]
fn write_dataset(scenes: Vec<PyScene>, path: PathBuf) -> PyResult<()> {
    let samples: Vec<SceneSample> = scenes.into_iter().map(|s| s.0).collect();
    synth::write_dataset(&samples, &path, serde_json::json!({"source": "python"}))
        .map(|_| ())
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

/// A trained alignment network.
#[pyclass(name = "AlignNet", module = "pcalign_py", frozen)]
struct PyAlignNet(AlignNet);

#[pymethods]
impl PyAlignNet {
    /// Fresh weights; `config_json` overrides fields of the default layout.
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg = match config_json {
            Some(j) => serde_json::from_str(j).map_err(value_err)?,
            None => Default::default(),
        };
        Ok(Self(AlignNet::new(cfg).map_err(value_err)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(AlignNet::load(&path).map_err(value_err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(value_err)
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.0.config.n_points
    }

    fn config_json(&self) -> String {
        serde_json::to_string(&self.0.config).expect("config serializes")
    }

    /// Both clouds must hold exactly `n_points` points.
    fn align(&self, py: Python<'_>, cloud1: Points, cloud2: Points) -> PyResult<PyGroundTransform> {
        let (a, b) = (cloud(cloud1), cloud(cloud2));
        let t = py.detach(|| self.0.align(&a, &b)).map_err(value_err)?;
        Ok(PyGroundTransform(t))
    }

    fn align_batch(&self, py: Python<'_>, clouds1: Vec<Points>, clouds2: Vec<Points>) -> PyResult<Vec<PyGroundTransform>> {
        let a: Vec<_> = clouds1.into_iter().map(cloud).collect();
        let b: Vec<_> = clouds2.into_iter().map(cloud).collect();
        let ts = py.detach(|| self.0.align_batch(&a, &b)).map_err(value_err)?;
        Ok(ts.into_iter().map(PyGroundTransform).collect())
    }

    /// Predicts every scene with the same point subsets `pcalign align` uses.
    #[pyo3(signature = (scenes, batch=64, seed=0))]
    fn predict(&self, py: Python<'_>, scenes: Vec<PyScene>, batch: usize, seed: u64) -> PyResult<Vec<PyGroundTransform>> {
        let samples: Vec<SceneSample> = scenes.into_iter().map(|s| s.0).collect();
        let preds = py.detach(|| harness::predict_alignnet(&self.0, &samples, batch, seed)).map_err(harness_err)?;
        Ok(preds.iter().map(|p| PyGroundTransform(p.transform())).collect())
    }
}

/// Scores one predicted transform per scene; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (predictions, scenes, axis_symmetric=false, method="python"))]
fn evaluate(predictions: Vec<PyGroundTransform>, scenes: Vec<PyScene>, axis_symmetric: bool, method: &str) -> PyResult<String> {
    let preds: Vec<Prediction> = predictions.iter().enumerate().map(|(i, t)| Prediction::new(i, &t.0, 0.0)).collect();
    let samples: Vec<SceneSample> = scenes.into_iter().map(|s| s.0).collect();
    let report = harness::evaluate(method, &preds, &samples, axis_symmetric).map_err(harness_err)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Runs the `pcalign` command line in-process; `args` excludes the program
/// name. Returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| harness::cli(std::iter::once("pcalign".to_string()).chain(args)))
}

#[pymodule]
fn pcalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroundTransform>()?;
    m.add_class::<PyIcpResult>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyAlignNet>()?;
    m.add_function(wrap_pyfunction!(icp_p2p, m)?)?;
    m.add_function(wrap_pyfunction!(noise_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenes, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
