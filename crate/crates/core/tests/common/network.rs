//! Small networks, synthetic box-shaped pairs and the whole-network
//! finite-difference check.

use std::f64::consts::PI;

use pcalign::alignnet::{compute_targets, staged_loss, AlignNet, AlignNetConfig, LossConfig, Mode, PairTruth};
use pcalign::autodiff::Real;
use pcalign::geom::{normalize_angle, GroundTransform, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;

pub fn small_config(n_points: usize, seed: u64) -> AlignNetConfig {
    AlignNetConfig {
        n_points,
        coarse_widths: vec![8, 16, 32],
        fine_widths: vec![8, 16, 32],
        embed_widths: vec![8, 16, 64],
        head_widths: vec![32, 16],
        seed,
        ..AlignNetConfig::default()
    }
}

pub fn box_cloud(rng: &mut ChaCha8Rng, n: usize, cx: f64, cy: f64, yaw: f64) -> PointCloud {
    let t = GroundTransform::new(cx, cy, yaw);
    (0..n)
        .map(|_| {
            let local = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.9..0.9), rng.random_range(-1.7..0.0));
            t.apply_point(&local)
        })
        .collect()
}

pub fn random_pairs(rng: &mut ChaCha8Rng, pairs: usize, n: usize) -> (Vec<PointCloud>, Vec<PointCloud>, Vec<PairTruth>) {
    let (mut c1, mut c2, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..pairs {
        let (x, y) = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let h1 = rng.random_range(-PI..PI);
        let gt = GroundTransform::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let (x2, y2) = gt.apply_xy(x, y);
        let h2 = normalize_angle(h1 + gt.yaw);
        c1.push(box_cloud(rng, n, x, y, h1));
        c2.push(box_cloud(rng, n, x2, y2, h2));
        truth.push(PairTruth { center1: [x, y], center2: [x2, y2], heading1: h1, heading2: h2, gt });
    }
    (c1, c2, truth)
}

/// Finite-difference step for the whole-network check. The graph has
/// thousands of relu and pooling kinks, so coordinates that cross one are
/// skipped; in 32-bit the step has to stay large enough to clear the noise
/// of the forward pass.
pub fn network_eps() -> f64 {
    if cfg!(feature = "f64") {
        1e-5
    } else {
        3e-3
    }
}

pub fn staged_loss_fd_error(seed: u64) -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = AlignNet::new(small_config(16, seed)).unwrap();
    let (c1, c2, truth) = random_pairs(&mut rng, 2, 16);
    let cfg = LossConfig::default();
    let mut fwd = net.forward(&c1, &c2, Mode::Infer).unwrap();
    let targets = compute_targets(&fwd, &truth).unwrap();
    let total = staged_loss(&mut fwd, &targets, &cfg).unwrap().total;
    let sig0 = fwd.tape.branch_signature();
    let grads = fwd.tape.param_grads(&fwd.tape.backward(total).unwrap());

    let eval = |net: &AlignNet| {
        let mut f = net.forward(&c1, &c2, Mode::Infer).unwrap();
        let l = oracle::loss(&oracle::outputs(&f), &targets, &cfg);
        staged_loss(&mut f, &targets, &cfg).unwrap();
        (l, f.tape.branch_signature())
    };
    let eps = network_eps();
    let (mut ad, mut fd, mut skipped) = (Vec::new(), Vec::new(), 0);
    for (id, g) in &grads {
        for _ in 0..3 {
            let i = rng.random_range(0..g.numel());
            let w = net.params.get(*id).data[i];
            let (hi, lo) = ((w as f64 + eps) as Real, (w as f64 - eps) as Real);
            net.params.get_mut(*id).data[i] = hi;
            let (lp, sp) = eval(&net);
            net.params.get_mut(*id).data[i] = lo;
            let (lm, sm) = eval(&net);
            net.params.get_mut(*id).data[i] = w;
            if sp != sig0 || sm != sig0 {
                skipped += 1;
                continue;
            }
            ad.push(g.data[i] as f64);
            fd.push((lp - lm) / (hi as f64 - lo as f64));
        }
    }
    (super::grad::rel_err(&ad, &fd), skipped, 3 * grads.len())
}

/// One random instance of the loss oracle: the largest target deviation and
/// the relative deviation of the total loss from the straight-line version.
pub fn loss_oracle_deviation(rng: &mut ChaCha8Rng, k: u64) -> (f64, f64) {
    let net = AlignNet::new(small_config(16, k)).unwrap();
    let pairs = rng.random_range(1..4);
    let (c1, c2, truth) = random_pairs(rng, pairs, 16);
    let cfg = LossConfig {
        lambda1: rng.random_range(0.1..2.0),
        lambda2: rng.random_range(0.1..2.0),
        delta_stage12: rng.random_range(0.2..2.0),
        delta_stage3: rng.random_range(0.2..3.0),
        reg_weight: rng.random_range(0.0..30.0),
        axis_symmetric: rng.random_bool(0.5),
    };
    let mut fwd = net.forward(&c1, &c2, Mode::Infer).unwrap();
    let outs = oracle::outputs(&fwd);
    let targets = compute_targets(&fwd, &truth).unwrap();
    let expect_t = oracle::targets(&outs, &truth);
    let mut target_dev = 0f64;
    for (a, b) in targets.stage1.iter().chain(&targets.stage2).zip(expect_t.stage1.iter().chain(&expect_t.stage2)) {
        target_dev = target_dev.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
    }
    for (a, b) in targets.stage3.iter().zip(&expect_t.stage3) {
        let d = normalize_angle(a.yaw - b.yaw).abs();
        target_dev = target_dev.max((a.tx - b.tx).abs()).max((a.ty - b.ty).abs()).max(d);
    }
    for (a, b) in targets.heading.iter().zip(&expect_t.heading) {
        target_dev = target_dev.max(normalize_angle(a - b).abs());
    }
    let got = staged_loss(&mut fwd, &targets, &cfg).unwrap().breakdown.total;
    let expect = oracle::loss(&outs, &expect_t, &cfg);
    (target_dev, (got - expect).abs() / expect.abs().max(1.0))
}
