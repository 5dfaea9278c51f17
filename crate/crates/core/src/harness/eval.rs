use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::TimingRow;
use super::HarnessError;
use crate::geom::{angle_deviation, GroundTransform};
use crate::synth::SceneSample;

pub const DISTANCE_FILTERS: [f64; 3] = [80.0, 20.0, 5.0];

/// Joint thresholds as (meters, degrees), tightest first.
pub const THRESHOLDS: [(f64, f64); 3] = [(0.02, 1.0), (0.10, 5.0), (0.20, 10.0)];

/// One line of the predictions interchange file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: usize,
    pub tx: f64,
    pub ty: f64,
    pub yaw: f64,
    pub wall_ms: f64,
}

impl Prediction {
    pub fn new(sample_id: usize, t: &GroundTransform, wall_ms: f64) -> Self {
        Self { sample_id, tx: t.tx, ty: t.ty, yaw: t.yaw, wall_ms }
    }

    pub fn transform(&self) -> GroundTransform {
        GroundTransform::new(self.tx, self.ty, self.yaw)
    }
}

/// Writes any serializable records as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads prediction records; extra fields on a line are ignored, so solver
/// logs such as the ICP output can be scored directly.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub max_translation_m: f64,
    pub max_rotation_deg: f64,
    /// Fraction of samples inside both thresholds; absent for empty filters.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub max_distance_m: f64,
    pub count: usize,
    pub bins: Vec<BinAccuracy>,
    pub rmse_t_m: Option<f64>,
    pub rmse_r_deg: Option<f64>,
    pub mean_wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub axis_symmetric: bool,
    pub filters: Vec<FilterMetrics>,
    #[serde(default)]
    pub timing: Vec<TimingRow>,
}

/// (distance, translation error, rotation error, wall time) of one sample.
type Row = (f64, f64, f64, f64);

/// Translation error (planar norm, meters) and rotation error (degrees).
pub fn sample_errors(pred: &GroundTransform, gt: &GroundTransform, axis_symmetric: bool) -> (f64, f64) {
    let t = (pred.tx - gt.tx).hypot(pred.ty - gt.ty);
    let r = angle_deviation(pred.yaw, gt.yaw, axis_symmetric).to_degrees();
    (t, r)
}

/// Scores predictions against ground truth. Predictions are matched to
/// samples by `sample_id`, so their order does not matter.
pub fn evaluate(
    method: &str,
    predictions: &[Prediction],
    samples: &[SceneSample],
    axis_symmetric: bool,
) -> Result<MetricsReport, HarnessError> {
    if predictions.len() != samples.len() {
        return Err(HarnessError::CountMismatch { predictions: predictions.len(), samples: samples.len() });
    }
    let mut by_id: Vec<Option<&Prediction>> = vec![None; samples.len()];
    for p in predictions {
        match by_id.get_mut(p.sample_id) {
            Some(slot @ None) => *slot = Some(p),
            _ => return Err(HarnessError::BadSampleId(p.sample_id)),
        }
    }
    // (distance, t_err, r_err, wall) in sample order, so every sum below is
    // accumulated in the same order regardless of the input order.
    let rows: Vec<(f64, f64, f64, f64)> = samples
        .iter()
        .zip(&by_id)
        .map(|(s, p)| {
            let p = p.expect("every id matched");
            let (t, r) = sample_errors(&p.transform(), &s.gt, axis_symmetric);
            (s.distance_d, t, r, p.wall_ms)
        })
        .collect();

    let filters = DISTANCE_FILTERS
        .iter()
        .map(|&limit| {
            let sel: Vec<_> = rows.iter().filter(|r| r.0 <= limit).collect();
            let n = sel.len();
            let mean = |f: &dyn Fn(&Row) -> f64| {
                (n > 0).then(|| sel.iter().map(|r| f(r)).sum::<f64>() / n as f64)
            };
            FilterMetrics {
                max_distance_m: limit,
                count: n,
                bins: THRESHOLDS
                    .iter()
                    .map(|&(tau, rho)| BinAccuracy {
                        max_translation_m: tau,
                        max_rotation_deg: rho,
                        accuracy: mean(&|r| if r.1 <= tau && r.2 <= rho { 1.0 } else { 0.0 }),
                    })
                    .collect(),
                rmse_t_m: mean(&|r| r.1 * r.1).map(f64::sqrt),
                rmse_r_deg: mean(&|r| r.2 * r.2).map(f64::sqrt),
                mean_wall_ms: mean(&|r| r.3),
            }
        })
        .collect();
    Ok(MetricsReport { method: method.to_string(), axis_symmetric, filters, timing: Vec::new() })
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |a| format!("{:.2}%", 100.0 * a))
}

fn num(v: Option<f64>, unit: &str) -> String {
    v.map_or("-".into(), |a| format!("{a:.3}{unit}"))
}

impl MetricsReport {
    /// Checks the invariants every report must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        for f in &self.filters {
            let acc: Vec<f64> = f.bins.iter().filter_map(|b| b.accuracy).collect();
            if acc.windows(2).any(|w| w[0] > w[1]) {
                return Err(format!("accuracies not monotone at {} m: {acc:?}", f.max_distance_m));
            }
        }
        for w in self.filters.windows(2) {
            if w[0].max_distance_m > w[1].max_distance_m && w[1].count > w[0].count {
                return Err(format!("{} m filter holds more samples than {} m", w[1].max_distance_m, w[0].max_distance_m));
            }
        }
        Ok(())
    }

    /// Aligned table, one row per distance filter.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sym = if self.axis_symmetric { " (axis-symmetric)" } else { "" };
        writeln!(s, "{}{sym}", self.method).unwrap();
        writeln!(
            s,
            "{:>8} {:>6} {:>10} {:>10} {:>10} {:>9} {:>9} {:>9}",
            "range", "count", "2cm,1°", "10cm,5°", "20cm,10°", "RMSE t", "RMSE R", "ms"
        )
        .unwrap();
        for f in &self.filters {
            writeln!(
                s,
                "{:>8} {:>6} {:>10} {:>10} {:>10} {:>9} {:>9} {:>9}",
                format!("<{}m", f.max_distance_m),
                f.count,
                pct(f.bins[0].accuracy),
                pct(f.bins[1].accuracy),
                pct(f.bins[2].accuracy),
                num(f.rmse_t_m, "m"),
                num(f.rmse_r_deg, "°"),
                num(f.mean_wall_ms, ""),
            )
            .unwrap();
        }
        for t in &self.timing {
            writeln!(s, "{}: batch {:>3}: {:.3} ms per transform ({} threads)", t.method, t.batch_size, t.ms_per_transform, t.threads)
                .unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,max_distance_m,count,acc_2cm_1deg,acc_10cm_5deg,acc_20cm_10deg,rmse_t_m,rmse_r_deg,mean_wall_ms\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for f in &self.filters {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                self.method,
                f.max_distance_m,
                f.count,
                opt(f.bins[0].accuracy),
                opt(f.bins[1].accuracy),
                opt(f.bins[2].accuracy),
                opt(f.rmse_t_m),
                opt(f.rmse_r_deg),
                opt(f.mean_wall_ms)
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point3, PointCloud};

    fn sample(d: f64, gt: GroundTransform) -> SceneSample {
        SceneSample {
            cloud1: PointCloud::default(),
            cloud2: PointCloud::default(),
            gt,
            center1: Point3::new(d, 0.0, 0.0),
            center2: Point3::new(d, 0.0, 0.0),
            heading1: 0.0,
            heading2: 0.0,
            distance_d: d,
            class_label: "car".into(),
            mesh_id: "m".into(),
        }
    }

    #[test]
    fn perfect_predictions() {
        let samples: Vec<_> = (0..5).map(|i| sample(3.0 + 15.0 * i as f64, GroundTransform::new(0.1 * i as f64, 0.2, 0.3))).collect();
        let preds: Vec<_> = samples.iter().enumerate().map(|(i, s)| Prediction::new(i, &s.gt, 1.0)).collect();
        let r = evaluate("x", &preds, &samples, false).unwrap();
        assert_eq!(r.filters[0].count, 5);
        assert_eq!(r.filters[1].count, 2);
        assert_eq!(r.filters[2].count, 1);
        for f in &r.filters {
            assert!(f.bins.iter().all(|b| b.accuracy == Some(1.0)));
            assert_eq!(f.rmse_t_m, Some(0.0));
            assert_eq!(f.rmse_r_deg, Some(0.0));
        }
        r.check_invariants().unwrap();
    }

    #[test]
    fn fifteen_cm_two_degrees_lands_in_the_widest_bin_only() {
        let gt = GroundTransform::new(1.0, 0.0, 0.0);
        let s = vec![sample(10.0, gt)];
        let p = vec![Prediction { sample_id: 0, tx: 1.15, ty: 0.0, yaw: 2f64.to_radians(), wall_ms: 0.0 }];
        let r = evaluate("x", &p, &s, false).unwrap();
        let acc: Vec<_> = r.filters[0].bins.iter().map(|b| b.accuracy.unwrap()).collect();
        assert_eq!(acc, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_filter_and_errors() {
        let s = vec![sample(50.0, GroundTransform::IDENTITY)];
        let p = vec![Prediction::new(0, &GroundTransform::IDENTITY, 0.0)];
        let r = evaluate("x", &p, &s, false).unwrap();
        assert_eq!(r.filters[2].count, 0);
        assert_eq!(r.filters[2].rmse_t_m, None);
        assert!(r.to_text().contains("<5m"));
        assert!(matches!(evaluate("x", &[], &s, false), Err(HarnessError::CountMismatch { .. })));
        let dup = vec![p[0], p[0]];
        let two = vec![s[0].clone(), s[0].clone()];
        assert!(matches!(evaluate("x", &dup, &two, false), Err(HarnessError::BadSampleId(0))));
    }

    #[test]
    fn symmetric_mode_folds_half_turns() {
        let s = vec![sample(10.0, GroundTransform::IDENTITY)];
        let p = vec![Prediction::new(0, &GroundTransform::rotation(std::f64::consts::PI), 0.0)];
        assert_eq!(evaluate("x", &p, &s, true).unwrap().filters[0].rmse_r_deg, Some(0.0));
        assert_eq!(evaluate("x", &p, &s, false).unwrap().filters[0].rmse_r_deg, Some(180.0));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds = vec![Prediction { sample_id: 3, tx: 0.5, ty: -1.0, yaw: 0.25, wall_ms: 1.5 }];
        write_jsonl(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
        fs::write(&path, "{\"sample_id\": 1}\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(HarnessError::Parse { line: 1, .. })));
    }
}
