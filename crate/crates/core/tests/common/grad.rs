//! Central finite-difference checks for tape operations.

use pcalign::autodiff::{Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn fd_eps() -> f64 {
    if cfg!(feature = "f64") {
        1e-5
    } else {
        1e-3
    }
}

pub fn fd_tol() -> f64 {
    if cfg!(feature = "f64") {
        1e-6
    } else {
        1e-3
    }
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).map(|v: f64| v as Real).collect()).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the plain difference norm when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-6 {
        diff
    } else {
        diff / scale
    }
}

/// Projects the output of `build` onto fixed random weights and compares the
/// reverse-mode gradient of that scalar with central differences for every
/// input element. Returns the worst per-input relative error.
pub fn grad_check<F>(inputs: &[Tensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    check(inputs, seed, false, build).worst
}

pub struct PiecewiseCheck {
    pub worst: f64,
    pub skipped: usize,
    pub total: usize,
}

/// Like [`grad_check`], but drops coordinates whose perturbation moves the
/// graph onto another smooth piece (a relu flips, a pooling winner changes).
pub fn grad_check_piecewise<F>(inputs: &[Tensor], seed: u64, build: F) -> PiecewiseCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    check(inputs, seed, true, build)
}

fn check<F>(inputs: &[Tensor], seed: u64, piecewise: bool, build: F) -> PiecewiseCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let sig0 = tape.branch_signature();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = randn(&mut rng, &tape.value(out).shape.clone());
    let grads = tape.backward_with(out, weights.clone()).unwrap();

    let eval = |xs: &[Tensor]| -> (f64, u64) {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = build(&mut t, &vs);
        let y = t.value(o).data.iter().zip(&weights.data).map(|(&y, &w)| y as f64 * w as f64).sum();
        (y, t.branch_signature())
    };

    let eps = fd_eps();
    let mut res = PiecewiseCheck { worst: 0.0, skipped: 0, total: 0 };
    for (k, input) in inputs.iter().enumerate() {
        let mut ad = Vec::with_capacity(input.numel());
        let mut fd = Vec::with_capacity(input.numel());
        let mut xs = inputs.to_vec();
        for i in 0..input.numel() {
            let x0 = input.data[i] as f64;
            let (hi, lo) = ((x0 + eps) as Real, (x0 - eps) as Real);
            xs[k].data[i] = hi;
            let (fp, sp) = eval(&xs);
            xs[k].data[i] = lo;
            let (fm, sm) = eval(&xs);
            xs[k].data[i] = input.data[i];
            res.total += 1;
            if piecewise && (sp != sig0 || sm != sig0) {
                res.skipped += 1;
                continue;
            }
            ad.push(grads.get(vars[k]).map_or(0.0, |g| g.data[i] as f64));
            fd.push((fp - fm) / (hi as f64 - lo as f64));
        }
        res.worst = res.worst.max(rel_err(&ad, &fd));
    }
    res
}

fn away_from_zero(t: &mut Tensor, margin: Real) {
    for v in &mut t.data {
        *v = v.signum() * (v.abs() + margin);
    }
}

/// Entries spaced at least `gap` apart in random order, so maxima are unique.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize], gap: Real) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<Real> = (0..n).map(|i| (i as Real - n as Real / 2.0) * gap).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub type OpCase = (&'static str, fn(u64) -> f64);

/// One gradient check per tape operation; each returns the worst relative error.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("linear", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let (b, n, i, o) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..6), r.random_range(1..6));
            let ins = [randn(&mut r, &[b, n, i]), randn(&mut r, &[i, o]), randn(&mut r, &[o])];
            grad_check(&ins, s, |t, v| t.linear(v[0], v[1], v[2]).unwrap())
        }),
        ("relu", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let mut x = randn(&mut r, &[4, 7]);
            away_from_zero(&mut x, 0.05);
            grad_check(&[x], s, |t, v| t.relu(v[0]))
        }),
        ("maxpool_points", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = distinct(&mut r, &[3, 6, 4], 0.05);
            grad_check(&[x], s, |t, v| t.maxpool_points(v[0]).unwrap())
        }),
        ("batchnorm_train", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[6, 5]), randn(&mut r, &[5]), randn(&mut r, &[5])];
            grad_check(&ins, s, |t, v| t.batchnorm_train(v[0], v[1], v[2]).unwrap().0)
        }),
        ("batchnorm_infer", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[2, 3, 5]), randn(&mut r, &[5]), randn(&mut r, &[5])];
            let mean: Vec<Real> = randn(&mut r, &[5]).data;
            let var: Vec<Real> = randn(&mut r, &[5]).data.iter().map(|v| v * v + 0.5).collect();
            grad_check(&ins, s, move |t, v| t.batchnorm_infer(v[0], v[1], v[2], &mean, &var).unwrap())
        }),
        ("dropout", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = randn(&mut r, &[5, 6]);
            grad_check(&[x], s, move |t, v| t.dropout(v[0], 0.5, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
        }),
        ("add", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[3, 4]), randn(&mut r, &[3, 4])];
            grad_check(&ins, s, |t, v| t.add(v[0], v[1]).unwrap())
        }),
        ("sub", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[3, 4]), randn(&mut r, &[3, 4])];
            grad_check(&ins, s, |t, v| t.sub(v[0], v[1]).unwrap())
        }),
        ("affine", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = randn(&mut r, &[8]);
            let bias = randn(&mut r, &[8]).data;
            grad_check(&[x], s, move |t, v| t.affine(v[0], -0.7, &bias).unwrap())
        }),
        ("slice_last", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = randn(&mut r, &[3, 9]);
            grad_check(&[x], s, |t, v| t.slice_last(v[0], 2, 7).unwrap())
        }),
        ("concat_last", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[3, 2]), randn(&mut r, &[3, 5])];
            grad_check(&ins, s, |t, v| t.concat_last(v[0], v[1]).unwrap())
        }),
        ("slice_rows", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = randn(&mut r, &[6, 2, 3]);
            grad_check(&[x], s, |t, v| t.slice_rows(v[0], 1, 4).unwrap())
        }),
        ("gather_cols", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = randn(&mut r, &[5, 7]);
            let idx: Vec<usize> = (0..5).map(|_| r.random_range(0..7)).collect();
            grad_check(&[x], s, move |t, v| t.gather_cols(v[0], &idx).unwrap())
        }),
        ("shift_xy", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[2, 5, 3]), randn(&mut r, &[2, 2])];
            grad_check(&ins, s, |t, v| t.shift_xy(v[0], v[1]).unwrap())
        }),
        ("rotate_z", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let ins = [randn(&mut r, &[3, 4, 3]), randn(&mut r, &[3])];
            grad_check(&ins, s, |t, v| t.rotate_z(v[0], v[1]).unwrap())
        }),
        ("huber", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let mut x = randn(&mut r, &[6, 2]);
            for v in &mut x.data {
                *v *= 2.0;
                // keep clear of the kink at |x| = δ
                if (v.abs() - 1.0).abs() < 0.05 {
                    *v *= 1.2;
                }
            }
            let target = vec![0.0; 12];
            grad_check(&[x], s, move |t, v| t.huber(v[0], &target, 1.0).unwrap())
        }),
        ("softmax_cross_entropy", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let x = randn(&mut r, &[4, 50]);
            let tgt: Vec<usize> = (0..4).map(|_| r.random_range(0..50)).collect();
            grad_check(&[x], s, move |t, v| t.softmax_cross_entropy(v[0], &tgt).unwrap())
        }),
        ("minimum", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let a = randn(&mut r, &[10]);
            let mut b = randn(&mut r, &[10]);
            for (y, x) in b.data.iter_mut().zip(&a.data) {
                if (*y - x).abs() < 0.05 {
                    *y += 0.1;
                }
            }
            grad_check(&[a, b], s, |t, v| t.minimum(v[0], v[1]).unwrap())
        }),
        ("mean", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            grad_check(&[randn(&mut r, &[4, 3])], s, |t, v| t.mean(v[0]))
        }),
        ("sum", |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            grad_check(&[randn(&mut r, &[4, 3])], s, |t, v| t.sum(v[0]))
        }),
    ]
}
