#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};

/// Scale estimate of a zero-mean sample from `median(|x|) / Φ⁻¹(3/4)`.
/// Symmetric clipping beyond the median leaves it untouched.
pub fn mad_sigma(draws: &[f64]) -> f64 {
    let mut abs: Vec<f64> = draws.iter().map(|x| x.abs()).collect();
    let mid = abs.len() / 2;
    let (_, m, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    let q = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.75);
    *m / q
}

pub fn raw_std(draws: &[f64]) -> f64 {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Standard deviation of N(0, σ²) clamped to [−a, a].
pub fn clipped_normal_std(sigma: f64, a: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let c = a / sigma;
    let pdf = (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let inside = 2.0 * n.cdf(c) - 1.0;
    let var = sigma * sigma * (inside - 2.0 * c * pdf) + a * a * (1.0 - inside);
    var.sqrt()
}

pub mod grad;
pub mod network;
pub mod oracle;
