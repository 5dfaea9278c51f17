//! Straight-line f64 reimplementation of the staged loss and its targets,
//! written against raw network outputs and 3x3 homogeneous matrices.

use std::f64::consts::{PI, TAU};

use pcalign::alignnet::{ForwardPass, LossConfig, LossTargets, PairTruth};
use pcalign::geom::GroundTransform;

pub struct Outputs {
    pub bins: usize,
    pub centroids: Vec<[f64; 2]>,
    pub coarse: Vec<Vec<f64>>,
    pub fine: Vec<Vec<f64>>,
    pub head: Vec<Vec<f64>>,
}

fn rows(t: &pcalign::autodiff::Tensor) -> Vec<Vec<f64>> {
    let c = t.shape[t.shape.len() - 1];
    t.data.chunks(c).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn outputs(f: &ForwardPass) -> Outputs {
    Outputs {
        bins: f.bins(),
        centroids: f.centroids.clone(),
        coarse: rows(f.tape.value(f.coarse)),
        fine: rows(f.tape.value(f.fine)),
        head: rows(f.tape.value(f.head)),
    }
}

type M3 = [[f64; 3]; 3];

fn mat(tx: f64, ty: f64, yaw: f64) -> M3 {
    let (s, c) = yaw.sin_cos();
    [[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]]
}

fn mul(a: &M3, b: &M3) -> M3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn inv(a: &M3) -> M3 {
    // Rigid inverse: transpose the rotation, rotate back the translation.
    let r = [[a[0][0], a[1][0]], [a[0][1], a[1][1]]];
    let t = [-(r[0][0] * a[0][2] + r[0][1] * a[1][2]), -(r[1][0] * a[0][2] + r[1][1] * a[1][2])];
    [[r[0][0], r[0][1], t[0]], [r[1][0], r[1][1], t[1]], [0.0, 0.0, 1.0]]
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn wrap(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    }
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Nearest bin center by exhaustive search, lower index on ties.
pub fn encode(theta: f64, bins: usize) -> (usize, f64) {
    let beta = TAU / bins as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..bins {
        let d = wrap(theta - i as f64 * beta).abs();
        if d < best.1 - 1e-12 {
            best = (i, d);
        }
    }
    let res = wrap(theta - best.0 as f64 * beta) / (beta / 2.0);
    (best.0, res.clamp(-1.0, 1.0))
}

fn canonical(o: &Outputs, r: usize) -> M3 {
    let b = o.bins;
    let beta = TAU / b as f64;
    let fine = &o.fine[r];
    let i = first_max(&fine[2..2 + b]);
    let alpha = i as f64 * beta + fine[2 + b + i] * beta / 2.0;
    let cx = o.centroids[r][0] + o.coarse[r][0] + fine[0];
    let cy = o.centroids[r][1] + o.coarse[r][1] + fine[1];
    mul(&mat(0.0, 0.0, -alpha), &mat(-cx, -cy, 0.0))
}

pub fn targets(o: &Outputs, truth: &[PairTruth]) -> LossTargets {
    let b = truth.len();
    let mut t = LossTargets { stage1: vec![], stage2: vec![], heading: vec![], stage3: vec![] };
    for r in 0..2 * b {
        let tr = &truth[r % b];
        let (c, h) = if r < b { (tr.center1, tr.heading1) } else { (tr.center2, tr.heading2) };
        let s1 = [c[0] - o.centroids[r][0], c[1] - o.centroids[r][1]];
        t.stage1.push(s1);
        t.stage2.push([s1[0] - o.coarse[r][0], s1[1] - o.coarse[r][1]]);
        t.heading.push(h);
    }
    for p in 0..b {
        let g = &truth[p].gt;
        let m = mul(&mul(&canonical(o, b + p), &mat(g.tx, g.ty, g.yaw)), &inv(&canonical(o, p)));
        t.stage3.push(GroundTransform::new(m[0][2], m[1][2], m[1][0].atan2(m[0][0])));
    }
    t
}

fn huber(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

fn transl(pred: &[Vec<f64>], target: &[[f64; 2]], delta: f64) -> f64 {
    let total: f64 = pred.iter().zip(target).map(|(p, t)| huber(p[0] - t[0], delta) + huber(p[1] - t[1], delta)).sum();
    total / pred.len() as f64
}

fn angle_row(row: &[f64], theta: f64, bins: usize, reg: f64) -> f64 {
    let logits = &row[2..2 + bins];
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let (bin, res) = encode(theta, bins);
    lse - logits[bin] + reg * huber(row[2 + bins + bin] - res, 1.0)
}

fn angle(pred: &[Vec<f64>], thetas: &[f64], bins: usize, cfg: &LossConfig) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(thetas)
        .map(|(row, &th)| {
            let a = angle_row(row, th, bins, cfg.reg_weight);
            if cfg.axis_symmetric {
                a.min(angle_row(row, th + PI, bins, cfg.reg_weight))
            } else {
                a
            }
        })
        .sum();
    total / pred.len() as f64
}

pub fn loss(o: &Outputs, t: &LossTargets, cfg: &LossConfig) -> f64 {
    let lt1 = transl(&o.coarse, &t.stage1, cfg.delta_stage12);
    let lt2 = transl(&o.fine, &t.stage2, cfg.delta_stage12);
    let s3: Vec<[f64; 2]> = t.stage3.iter().map(|g| [g.tx, g.ty]).collect();
    let lt3 = transl(&o.head, &s3, cfg.delta_stage3);
    let la2 = angle(&o.fine, &t.heading, o.bins, cfg);
    let yaw3: Vec<f64> = t.stage3.iter().map(|g| g.yaw).collect();
    let la3 = angle(&o.head, &yaw3, o.bins, cfg);
    cfg.lambda1 * (lt1 + lt2) + lt3 + cfg.lambda2 * (cfg.lambda1 * la2 + la3)
}
