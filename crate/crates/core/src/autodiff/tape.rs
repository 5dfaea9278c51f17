use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::gemm::{gemm, View};
use super::store::{ParamId, ParamStore};
use super::{shape_err, AutodiffError, Real, Tensor};

const BN_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-feature batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    MaxPool { x: Var, argmax: Vec<u32> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<Real>, inv_std: Vec<Real>, train: bool },
    Dropout { x: Var, mask: Vec<Real> },
    Add(Var, Var),
    Sub(Var, Var),
    Affine { x: Var, scale: Real },
    SliceLast { x: Var, start: usize },
    ConcatLast(Var, Var),
    SliceRows { x: Var, start: usize },
    GatherCols { x: Var, idx: Vec<usize> },
    ShiftXy { p: Var, c: Var },
    RotateZ { p: Var, angle: Var },
    Huber { x: Var, target: Vec<Real>, delta: f64 },
    SoftmaxCe { logits: Var, target: Vec<usize>, probs: Vec<Real> },
    Minimum(Var, Var),
    Mean(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::MaxPool { .. } => "maxpool_points",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Dropout { .. } => "dropout",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Affine { .. } => "affine",
            Op::SliceLast { .. } => "slice_last",
            Op::ConcatLast(..) => "concat_last",
            Op::SliceRows { .. } => "slice_rows",
            Op::GatherCols { .. } => "gather_cols",
            Op::ShiftXy { .. } => "shift_xy",
            Op::RotateZ { .. } => "rotate_z",
            Op::Huber { .. } => "huber",
            Op::SoftmaxCe { .. } => "softmax_cross_entropy",
            Op::Minimum(..) => "minimum",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order so that [`Tape::backward`] can walk
/// them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients of leaves that require them, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape != b.shape {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], grad: Vec<Real>) {
    match slot {
        Some(t) => t.data.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
        None => *slot = Some(Tensor { shape: shape.to_vec(), data: grad }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies a stored parameter onto the tape. Repeated requests for the
    /// same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let trainable = store.is_trainable(id);
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable);
        self.params.push((id, v));
        v
    }

    /// Gradients of every parameter placed on this tape.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| grads.get(v).map(|g| (id, g.clone())))
            .collect()
    }

    /// First node holding a non-finite value, if any.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.nodes.iter().position(|n| !n.value.is_finite()) {
            Some(node) => Err(AutodiffError::NonFinite { op: self.nodes[node].op.name(), node }),
            None => Ok(()),
        }
    }

    /// Hash of every discrete choice recorded so far: relu masks, pooling
    /// winners, Huber regions, minimum picks, gathered columns and dropout
    /// masks. Two tapes with equal signatures sit on the same smooth piece of
    /// the function, which is what finite-difference checks need.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => self.value(*x).data.iter().for_each(|&v| (v > 0.0).hash(&mut h)),
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                Op::Huber { x, target, delta } => {
                    for (&v, &t) in self.value(*x).data.iter().zip(target) {
                        ((v as f64 - t as f64).abs() <= *delta).hash(&mut h);
                    }
                }
                Op::Minimum(a, b) => {
                    for (&x, &y) in self.value(*a).data.iter().zip(&self.value(*b).data) {
                        (y < x).hash(&mut h);
                    }
                }
                Op::GatherCols { idx, .. } => idx.hash(&mut h),
                Op::SoftmaxCe { target, .. } => target.hash(&mut h),
                Op::Dropout { mask, .. } => mask.iter().for_each(|m| (*m != 0.0).hash(&mut h)),
                _ => {}
            }
        }
        h.finish()
    }

    /// Affine map over the last axis: `x: [.., I]`, `w: [I, O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape.len() != 2 || xv.last_dim() != wv.shape[0] || bv.shape != [wv.shape[1]] {
            return Err(shape_err("linear", format!("x {:?}, w {:?}, b {:?}", xv.shape, wv.shape, bv.shape)));
        }
        let (m, k, n) = (xv.rows(), wv.shape[0], wv.shape[1]);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&bv.data);
        }
        gemm(m, k, n, View::row_major(&xv.data, k), View::row_major(&wv.data, n), 1.0, &mut out);
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = n;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor { shape: xv.shape.clone(), data };
        let ng = self.needs(x);
        self.push(t, Op::Relu(x), ng)
    }

    /// Max over the point axis of `[B, N, C]`. Ties resolve to the lowest point index.
    pub fn maxpool_points(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape.len() != 3 {
            return Err(shape_err("maxpool_points", format!("expected [B, N, C], got {:?}", xv.shape)));
        }
        let (b, n, c) = (xv.shape[0], xv.shape[1], xv.shape[2]);
        if n == 0 {
            return Err(AutodiffError::Precondition { op: "maxpool_points", what: "at least one point".into() });
        }
        let mut out = vec![0.0; b * c];
        let mut argmax = vec![0u32; b * c];
        for bi in 0..b {
            let block = &xv.data[bi * n * c..(bi + 1) * n * c];
            let (o, a) = (&mut out[bi * c..(bi + 1) * c], &mut argmax[bi * c..(bi + 1) * c]);
            o.copy_from_slice(&block[..c]);
            for p in 1..n {
                let row = &block[p * c..(p + 1) * c];
                for j in 0..c {
                    if row[j] > o[j] {
                        o[j] = row[j];
                        a[j] = p as u32;
                    }
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor { shape: vec![b, c], data: out }, Op::MaxPool { x, argmax }, ng))
    }

    /// Batch norm over every axis but the last, using the batch's own statistics.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats), AutodiffError> {
        let xv = self.value(x);
        let (m, c) = (xv.rows(), xv.last_dim());
        self.check_bn(x, gamma, beta)?;
        if m < 2 {
            return Err(AutodiffError::Precondition { op: "batchnorm", what: "a batch of at least 2 in train mode".into() });
        }
        let mut sum = vec![0f64; c];
        for row in xv.data.chunks_exact(c) {
            sum.iter_mut().zip(row).for_each(|(s, &v)| *s += v as f64);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
        let mut sq = vec![0f64; c];
        for row in xv.data.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] as f64 - mean[j];
                sq[j] += d * d;
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
        let stats = BatchStats {
            mean: mean.iter().map(|&v| v as Real).collect(),
            var: var.iter().map(|&v| v as Real).collect(),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let v = self.bn_apply(x, gamma, beta, &mean, &inv_std, true);
        Ok((v, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[Real],
        running_var: &[Real],
    ) -> Result<Var, AutodiffError> {
        self.check_bn(x, gamma, beta)?;
        let c = self.value(x).last_dim();
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batchnorm", "running statistics do not match feature count"));
        }
        let mean: Vec<f64> = running_mean.iter().map(|&v| v as f64).collect();
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v as f64 + BN_EPS).sqrt()).collect();
        Ok(self.bn_apply(x, gamma, beta, &mean, &inv_std, false))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(), AutodiffError> {
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "batchnorm",
                format!("x {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok(())
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64], train: bool) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data.chunks_exact(c) {
            for j in 0..c {
                let xhat = (row[j] as f64 - mean[j]) * inv_std[j];
                out.push((g[j] as f64 * xhat + b[j] as f64) as Real);
            }
        }
        let t = Tensor { shape: xv.shape.clone(), data: out };
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean: mean.iter().map(|&v| v as Real).collect(),
            inv_std: inv_std.iter().map(|&v| v as Real).collect(),
            train,
        };
        self.push(t, op, ng)
    }

    /// Zeroes each unit with probability `rate` and rescales survivors.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Precondition { op: "dropout", what: format!("rate in [0, 1), got {rate}") });
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = (1.0 / (1.0 - rate)) as Real;
        let xv = self.value(x);
        let mask: Vec<Real> = (0..xv.numel()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let data = xv.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor { shape: xv.shape.clone(), data };
        let ng = self.needs(x);
        Ok(self.push(t, Op::Dropout { x, mask }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        check_same("add", self.value(a), self.value(b))?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let t = Tensor { shape: self.value(a).shape.clone(), data };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        check_same("sub", self.value(a), self.value(b))?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x - y).collect();
        let t = Tensor { shape: self.value(a).shape.clone(), data };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Var {
        let bias = vec![0.0; self.value(x).numel()];
        self.affine(x, s, &bias).expect("bias sized to input")
    }

    /// `scale·x + bias` with a constant, same-shaped `bias`.
    pub fn affine(&mut self, x: Var, scale: Real, bias: &[Real]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if bias.len() != xv.numel() {
            return Err(shape_err("affine", format!("bias of {} for {:?}", bias.len(), xv.shape)));
        }
        let data = xv.data.iter().zip(bias).map(|(v, b)| scale * v + b).collect();
        let t = Tensor { shape: xv.shape.clone(), data };
        let ng = self.needs(x);
        Ok(self.push(t, Op::Affine { x, scale }, ng))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if start >= end || end > c {
            return Err(shape_err("slice_last", format!("{start}..{end} of {c} columns")));
        }
        let mut data = Vec::with_capacity(xv.rows() * (end - start));
        for row in xv.data.chunks_exact(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = end - start;
        let ng = self.needs(x);
        Ok(self.push(Tensor { shape, data }, Op::SliceLast { x, start }, ng))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        if av.shape[..av.shape.len() - 1] != bv.shape[..bv.shape.len() - 1] {
            return Err(shape_err("concat_last", format!("{:?} vs {:?}", av.shape, bv.shape)));
        }
        let mut data = Vec::with_capacity(av.numel() + bv.numel());
        for (ra, rb) in av.data.chunks_exact(ca).zip(bv.data.chunks_exact(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = av.shape.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape, data }, Op::ConcatLast(a, b), ng))
    }

    /// Entries `start..end` of the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let lead = *xv.shape.first().unwrap_or(&0);
        if start >= end || end > lead {
            return Err(shape_err("slice_rows", format!("{start}..{end} of {lead} rows")));
        }
        let stride = xv.numel() / lead;
        let data = xv.data[start * stride..end * stride].to_vec();
        let mut shape = xv.shape.clone();
        shape[0] = end - start;
        let ng = self.needs(x);
        Ok(self.push(Tensor { shape, data }, Op::SliceRows { x, start }, ng))
    }

    /// Picks `x[b, idx[b]]` from `x: [B, K]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape.len() != 2 || idx.len() != xv.shape[0] || idx.iter().any(|&i| i >= xv.shape[1]) {
            return Err(shape_err("gather_cols", format!("{} indices into {:?}", idx.len(), xv.shape)));
        }
        let k = xv.shape[1];
        let data = idx.iter().enumerate().map(|(b, &i)| xv.data[b * k + i]).collect();
        let ng = self.needs(x);
        Ok(self.push(Tensor { shape: vec![idx.len()], data }, Op::GatherCols { x, idx: idx.to_vec() }, ng))
    }

    /// Subtracts a per-cloud planar offset `c: [B, 2]` from points `p: [B, N, 3]`.
    pub fn shift_xy(&mut self, p: Var, c: Var) -> Result<Var, AutodiffError> {
        let (pv, cv) = (self.value(p), self.value(c));
        if pv.shape.len() != 3 || pv.shape[2] != 3 || cv.shape != [pv.shape[0], 2] {
            return Err(shape_err("shift_xy", format!("points {:?}, offsets {:?}", pv.shape, cv.shape)));
        }
        let n = pv.shape[1];
        let mut data = pv.data.clone();
        for (b, cloud) in data.chunks_exact_mut(n * 3).enumerate() {
            for pt in cloud.chunks_exact_mut(3) {
                pt[0] -= cv.data[2 * b];
                pt[1] -= cv.data[2 * b + 1];
            }
        }
        let t = Tensor { shape: pv.shape.clone(), data };
        let ng = self.needs(p) || self.needs(c);
        Ok(self.push(t, Op::ShiftXy { p, c }, ng))
    }

    /// Rotates each cloud of `p: [B, N, 3]` about z by `angle: [B]`.
    pub fn rotate_z(&mut self, p: Var, angle: Var) -> Result<Var, AutodiffError> {
        let (pv, av) = (self.value(p), self.value(angle));
        if pv.shape.len() != 3 || pv.shape[2] != 3 || av.shape != [pv.shape[0]] {
            return Err(shape_err("rotate_z", format!("points {:?}, angles {:?}", pv.shape, av.shape)));
        }
        let n = pv.shape[1];
        let mut data = pv.data.clone();
        for (b, cloud) in data.chunks_exact_mut(n * 3).enumerate() {
            let (s, c) = (av.data[b] as f64).sin_cos();
            for pt in cloud.chunks_exact_mut(3) {
                let (x, y) = (pt[0] as f64, pt[1] as f64);
                pt[0] = (c * x - s * y) as Real;
                pt[1] = (s * x + c * y) as Real;
            }
        }
        let t = Tensor { shape: pv.shape.clone(), data };
        let ng = self.needs(p) || self.needs(angle);
        Ok(self.push(t, Op::RotateZ { p, angle }, ng))
    }

    /// Per-row sum of Huber penalties of `x − target` for `x: [B, C]`.
    pub fn huber(&mut self, x: Var, target: &[Real], delta: f64) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if target.len() != xv.numel() || xv.shape.is_empty() {
            return Err(shape_err("huber", format!("target of {} for {:?}", target.len(), xv.shape)));
        }
        if delta <= 0.0 {
            return Err(AutodiffError::Precondition { op: "huber", what: "delta > 0".into() });
        }
        let c = if xv.shape.len() == 1 { 1 } else { xv.last_dim() };
        let data = xv
            .data
            .chunks_exact(c)
            .zip(target.chunks_exact(c))
            .map(|(row, t)| row.iter().zip(t).map(|(&v, &t)| huber_value(v as f64 - t as f64, delta)).sum::<f64>() as Real)
            .collect::<Vec<_>>();
        let rows = data.len();
        let ng = self.needs(x);
        Ok(self.push(Tensor { shape: vec![rows], data }, Op::Huber { x, target: target.to_vec(), delta }, ng))
    }

    /// Per-row `−log softmax(logits)[target]` for `logits: [B, K]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &[usize]) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        if lv.shape.len() != 2 || lv.shape[0] != target.len() || lv.shape[1] < 2 {
            return Err(shape_err("softmax_cross_entropy", format!("{} targets for {:?}", target.len(), lv.shape)));
        }
        let k = lv.shape[1];
        if let Some(&t) = target.iter().find(|&&t| t >= k) {
            return Err(AutodiffError::Precondition { op: "softmax_cross_entropy", what: format!("target {t} < {k}") });
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut out = Vec::with_capacity(target.len());
        for (row, &t) in lv.data.chunks_exact(k).zip(target) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            let lse = max + z.ln();
            probs.extend(row.iter().map(|&v| ((v as f64 - max).exp() / z) as Real));
            out.push((lse - row[t] as f64) as Real);
        }
        let ng = self.needs(logits);
        Ok(self.push(Tensor { shape: vec![target.len()], data: out }, Op::SoftmaxCe { logits, target: target.to_vec(), probs }, ng))
    }

    /// Elementwise minimum; ties take the gradient path of `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        check_same("minimum", self.value(a), self.value(b))?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| if y < x { y } else { x }).collect();
        let t = Tensor { shape: self.value(a).shape.clone(), data };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Minimum(a, b), ng))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data.iter().map(|&v| v as f64).sum::<f64>() / xv.numel().max(1) as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(m as Real), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().map(|&v| v as f64).sum::<f64>();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s as Real), Op::Sum(x), ng)
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        if self.value(root).numel() != 1 {
            return Err(shape_err("backward", format!("root must be a scalar, got {:?}", self.shape(root))));
        }
        self.backward_with(root, Tensor { shape: self.shape(root).to_vec(), data: vec![1.0] })
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Gradients, AutodiffError> {
        if seed.shape != self.value(root).shape {
            return Err(shape_err("backward", format!("seed {:?} for root {:?}", seed.shape, self.shape(root))));
        }
        let mut work: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        work[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(g) = work[i].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            let g = g.data;
            match &node.op {
                Op::Leaf => leaves[i] = Some(Tensor { shape: node.value.shape.clone(), data: g }),
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (m, k, n) = (xv.rows(), wv.shape[0], wv.shape[1]);
                    if self.needs(*x) {
                        let mut dx = vec![0.0; m * k];
                        gemm(m, n, k, View::row_major(&g, n), View::transposed(&wv.data, n), 0.0, &mut dx);
                        accumulate(&mut work[x.0], &xv.shape, dx);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![0.0; k * n];
                        gemm(k, m, n, View::transposed(&xv.data, k), View::row_major(&g, n), 0.0, &mut dw);
                        accumulate(&mut work[w.0], &wv.shape, dw);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0f64; n];
                        for row in g.chunks_exact(n) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v as f64);
                        }
                        accumulate(&mut work[b.0], &[n], db.into_iter().map(|v| v as Real).collect());
                    }
                }
                Op::Relu(x) => {
                    let dx = g.iter().zip(&node.value.data).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }).collect();
                    accumulate(&mut work[x.0], &node.value.shape, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let xs = &self.value(*x).shape;
                    let (n, c) = (xs[1], xs[2]);
                    let mut dx = vec![0.0; xs.iter().product()];
                    for (slot, (&gv, &p)) in g.iter().zip(argmax).enumerate() {
                        let (b, j) = (slot / c, slot % c);
                        dx[(b * n + p as usize) * c + j] += gv;
                    }
                    accumulate(&mut work[x.0], xs, dx);
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                    let xv = self.value(*x);
                    let (m, c) = (xv.rows(), xv.last_dim());
                    let gam = &self.value(*gamma).data;
                    let (mut sg, mut sgx) = (vec![0f64; c], vec![0f64; c]);
                    for (row, grow) in xv.data.chunks_exact(c).zip(g.chunks_exact(c)) {
                        for j in 0..c {
                            let xhat = (row[j] as f64 - mean[j] as f64) * inv_std[j] as f64;
                            sg[j] += grow[j] as f64;
                            sgx[j] += grow[j] as f64 * xhat;
                        }
                    }
                    if self.needs(*x) {
                        let mut dx = Vec::with_capacity(xv.numel());
                        for (row, grow) in xv.data.chunks_exact(c).zip(g.chunks_exact(c)) {
                            for j in 0..c {
                                let s = gam[j] as f64 * inv_std[j] as f64;
                                let v = if *train {
                                    let xhat = (row[j] as f64 - mean[j] as f64) * inv_std[j] as f64;
                                    s * (grow[j] as f64 - sg[j] / m as f64 - xhat * sgx[j] / m as f64)
                                } else {
                                    s * grow[j] as f64
                                };
                                dx.push(v as Real);
                            }
                        }
                        accumulate(&mut work[x.0], &xv.shape, dx);
                    }
                    if self.needs(*gamma) {
                        accumulate(&mut work[gamma.0], &[c], sgx.iter().map(|&v| v as Real).collect());
                    }
                    if self.needs(*beta) {
                        accumulate(&mut work[beta.0], &[c], sg.iter().map(|&v| v as Real).collect());
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                    accumulate(&mut work[x.0], &node.value.shape, dx);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut work[b.0], &node.value.shape, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut work[a.0], &node.value.shape, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut work[b.0], &node.value.shape, g.iter().map(|v| -v).collect());
                    }
                    if self.needs(*a) {
                        accumulate(&mut work[a.0], &node.value.shape, g);
                    }
                }
                Op::Affine { x, scale } => {
                    accumulate(&mut work[x.0], &node.value.shape, g.iter().map(|v| v * scale).collect());
                }
                Op::SliceLast { x, start } => {
                    let xs = &self.value(*x).shape;
                    let (c, w) = (*xs.last().unwrap(), node.value.last_dim());
                    let mut dx = vec![0.0; xs.iter().product()];
                    for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                        drow[*start..start + w].copy_from_slice(grow);
                    }
                    accumulate(&mut work[x.0], xs, dx);
                }
                Op::ConcatLast(a, b) => {
                    let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                    let rows = g.chunks_exact(ca + cb);
                    if self.needs(*a) {
                        let da = rows.clone().flat_map(|r| r[..ca].iter().copied()).collect();
                        accumulate(&mut work[a.0], &self.value(*a).shape, da);
                    }
                    if self.needs(*b) {
                        let db = rows.flat_map(|r| r[ca..].iter().copied()).collect();
                        accumulate(&mut work[b.0], &self.value(*b).shape, db);
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let stride = xv.numel() / xv.shape[0];
                    let mut dx = vec![0.0; xv.numel()];
                    dx[start * stride..start * stride + g.len()].copy_from_slice(&g);
                    accumulate(&mut work[x.0], &xv.shape, dx);
                }
                Op::GatherCols { x, idx } => {
                    let xs = &self.value(*x).shape;
                    let k = xs[1];
                    let mut dx = vec![0.0; xs[0] * k];
                    for (b, (&i, &gv)) in idx.iter().zip(&g).enumerate() {
                        dx[b * k + i] += gv;
                    }
                    accumulate(&mut work[x.0], xs, dx);
                }
                Op::ShiftXy { p, c } => {
                    let n = node.value.shape[1];
                    if self.needs(*c) {
                        let mut dc = Vec::with_capacity(node.value.shape[0] * 2);
                        for cloud in g.chunks_exact(n * 3) {
                            let (mut sx, mut sy) = (0f64, 0f64);
                            for pt in cloud.chunks_exact(3) {
                                sx += pt[0] as f64;
                                sy += pt[1] as f64;
                            }
                            dc.push(-sx as Real);
                            dc.push(-sy as Real);
                        }
                        accumulate(&mut work[c.0], &self.value(*c).shape, dc);
                    }
                    if self.needs(*p) {
                        accumulate(&mut work[p.0], &node.value.shape, g);
                    }
                }
                Op::RotateZ { p, angle } => {
                    let n = node.value.shape[1];
                    let av = &self.value(*angle).data;
                    if self.needs(*angle) {
                        let da = g
                            .chunks_exact(n * 3)
                            .zip(node.value.data.chunks_exact(n * 3))
                            .map(|(gc, yc)| {
                                gc.chunks_exact(3)
                                    .zip(yc.chunks_exact(3))
                                    .map(|(gp, yp)| -(gp[0] as f64) * yp[1] as f64 + gp[1] as f64 * yp[0] as f64)
                                    .sum::<f64>() as Real
                            })
                            .collect();
                        accumulate(&mut work[angle.0], &[av.len()], da);
                    }
                    if self.needs(*p) {
                        let mut dp = g;
                        for (b, cloud) in dp.chunks_exact_mut(n * 3).enumerate() {
                            let (s, c) = (av[b] as f64).sin_cos();
                            for pt in cloud.chunks_exact_mut(3) {
                                let (gx, gy) = (pt[0] as f64, pt[1] as f64);
                                pt[0] = (c * gx + s * gy) as Real;
                                pt[1] = (-s * gx + c * gy) as Real;
                            }
                        }
                        accumulate(&mut work[p.0], &node.value.shape, dp);
                    }
                }
                Op::Huber { x, target, delta } => {
                    let xv = self.value(*x);
                    let c = xv.numel() / g.len();
                    let dx = xv
                        .data
                        .iter()
                        .zip(target)
                        .enumerate()
                        .map(|(i, (&v, &t))| (g[i / c] as f64 * (v as f64 - t as f64).clamp(-delta, *delta)) as Real)
                        .collect();
                    accumulate(&mut work[x.0], &xv.shape, dx);
                }
                Op::SoftmaxCe { logits, target, probs } => {
                    let k = self.value(*logits).shape[1];
                    let mut dx = Vec::with_capacity(probs.len());
                    for (b, row) in probs.chunks_exact(k).enumerate() {
                        for (j, &p) in row.iter().enumerate() {
                            let onehot = if j == target[b] { 1.0 } else { 0.0 };
                            dx.push(g[b] * (p - onehot));
                        }
                    }
                    accumulate(&mut work[logits.0], &self.value(*logits).shape, dx);
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                    let take_b: Vec<bool> = av.iter().zip(bv).map(|(x, y)| y < x).collect();
                    if self.needs(*a) {
                        let da = g.iter().zip(&take_b).map(|(&g, &tb)| if tb { 0.0 } else { g }).collect();
                        accumulate(&mut work[a.0], &node.value.shape, da);
                    }
                    if self.needs(*b) {
                        let db = g.iter().zip(&take_b).map(|(&g, &tb)| if tb { g } else { 0.0 }).collect();
                        accumulate(&mut work[b.0], &node.value.shape, db);
                    }
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let v = g[0] / xv.numel() as Real;
                    accumulate(&mut work[x.0], &xv.shape, vec![v; xv.numel()]);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut work[x.0], &xv.shape, vec![g[0]; xv.numel()]);
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

pub(crate) fn huber_value(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * a - 0.5 * delta * delta
    }
}
