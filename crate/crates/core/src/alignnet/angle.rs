use std::f64::consts::TAU;

use crate::autodiff::Real;
use crate::geom::normalize_angle;

/// Angle expressed as a bin index plus a residual normalized to `[-1, 1]`
/// (one unit is half a bin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleTarget {
    pub bin: usize,
    pub residual_norm: f64,
}

pub fn bin_width(bins: usize) -> f64 {
    TAU / bins as f64
}

/// Nearest bin center; an angle exactly halfway between two centers goes to
/// the lower bin.
pub fn angle_encode(theta: f64, bins: usize) -> AngleTarget {
    let beta = bin_width(bins);
    let wrapped = theta.rem_euclid(TAU);
    let bin = ((wrapped / beta - 0.5).ceil() as i64).rem_euclid(bins as i64) as usize;
    let residual = normalize_angle(wrapped - bin as f64 * beta);
    AngleTarget { bin, residual_norm: (residual / (beta / 2.0)).clamp(-1.0, 1.0) }
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// `α = i·β + res_i·β/2` for the most likely bin `i`, wrapped to (−π, π].
pub fn angle_decode(logits: &[Real], residuals: &[Real]) -> f64 {
    let bins = logits.len();
    let i = argmax(logits);
    let beta = bin_width(bins);
    normalize_angle(i as f64 * beta + residuals[i] as f64 * beta / 2.0)
}
