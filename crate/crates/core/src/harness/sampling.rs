use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::HarnessError;
use crate::geom::{Point3, PointCloud};
use crate::synth::SceneSample;

/// Exactly `n` points of `c`: uniform without replacement when the cloud is
/// large enough, with replacement otherwise.
pub fn sample_points<R: Rng + ?Sized>(c: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud, HarnessError> {
    if c.is_empty() {
        return Err(HarnessError::EmptyCloud);
    }
    let pts = &c.points;
    let picked = if pts.len() >= n {
        index::sample(rng, pts.len(), n).into_iter().map(|i| pts[i]).collect()
    } else {
        (0..n).map(|_| pts[rng.random_range(0..pts.len())]).collect()
    };
    Ok(PointCloud::new(picked))
}

/// Per-coordinate Gaussian jitter, each draw clamped to `±clip`.
pub fn augment<R: Rng + ?Sized>(c: &PointCloud, sigma: f64, clip: f64, rng: &mut R) -> PointCloud {
    if sigma == 0.0 {
        return c.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut jitter = || normal.sample(rng).clamp(-clip, clip);
    c.iter().map(|p| Point3::new(p.x + jitter(), p.y + jitter(), p.z + jitter())).collect()
}

/// Random stream for the point subsets of dataset entry `index`.
pub fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7053_616d_706c_6521);
    rng.set_stream(index as u64);
    rng
}

/// The network input for one dataset entry: `n` points from each scan, drawn
/// from a stream that depends only on `(seed, index)`.
pub fn fixed_inputs(sample: &SceneSample, index: usize, n: usize, seed: u64) -> Result<(PointCloud, PointCloud), HarnessError> {
    let mut rng = point_rng(seed, index);
    Ok((sample_points(&sample.cloud1, n, &mut rng)?, sample_points(&sample.cloud2, n, &mut rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn full_size_sample_is_a_permutation() {
        let c = line(50);
        let s = sample_points(&c, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut xs: Vec<f64> = s.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, (0..50).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn single_point_is_repeated() {
        let c = line(1);
        let s = sample_points(&c, 512, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(s.len(), 512);
        assert!(s.iter().all(|p| *p == c.points[0]));
    }

    #[test]
    fn sampling_is_seeded_and_rejects_empty() {
        let c = line(300);
        let a = sample_points(&c, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_points(&c, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let mut xs: Vec<f64> = a.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        assert_eq!(xs.len(), 64);
        assert!(matches!(sample_points(&PointCloud::default(), 4, &mut ChaCha8Rng::seed_from_u64(0)), Err(HarnessError::EmptyCloud)));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = line(10);
        assert_eq!(augment(&c, 0.0, 0.05, &mut ChaCha8Rng::seed_from_u64(4)), c);
    }

    #[test]
    fn jitter_scale_and_clip() {
        let c = PointCloud::new(vec![Point3::ORIGIN; 333_334]);
        let out = augment(&c, 0.01, 0.05, &mut ChaCha8Rng::seed_from_u64(5));
        let draws: Vec<f64> = out.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        assert!(draws.iter().all(|d| d.abs() <= 0.05));
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std / 0.01 - 1.0).abs() < 0.02, "{std}");
    }
}
