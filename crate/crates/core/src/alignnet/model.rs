use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::angle::{angle_decode, argmax, bin_width};
use super::AlignNetError;
use crate::autodiff::{
    load_checkpoint, save_checkpoint, BatchStats, Checkpoint, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var,
};
use crate::geom::{GroundTransform, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignNetConfig {
    pub bins: usize,
    pub n_points: usize,
    pub coarse_widths: Vec<usize>,
    pub fine_widths: Vec<usize>,
    pub embed_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    /// Probability of zeroing a unit after the last hidden head layer.
    pub dropout: f64,
    pub seed: u64,
    /// The weights were trained with θ and θ+π treated as one heading. Kept
    /// with the checkpoint so evaluation can fold angles the same way.
    pub axis_symmetric: bool,
}

impl Default for AlignNetConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            n_points: 512,
            coarse_widths: vec![64, 128, 256],
            fine_widths: vec![64, 128, 512],
            embed_widths: vec![64, 128, 1024],
            head_widths: vec![512, 256],
            dropout: 0.7,
            seed: 0,
            axis_symmetric: false,
        }
    }
}

impl AlignNetConfig {
    pub fn validate(&self) -> Result<(), AlignNetError> {
        let bad = |m: &str| Err(AlignNetError::Config(m.to_string()));
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        if self.n_points == 0 {
            return bad("n_points must be positive");
        }
        for (name, w) in [
            ("coarse_widths", &self.coarse_widths),
            ("fine_widths", &self.fine_widths),
            ("embed_widths", &self.embed_widths),
            ("head_widths", &self.head_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return bad(&format!("{name} must be non-empty and positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Width of a head that predicts a translation and an angle.
    pub fn pose_width(&self) -> usize {
        2 + 2 * self.bins
    }
}

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct BnLayer {
    dense: Dense,
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
struct Mlp {
    hidden: Vec<BnLayer>,
    out: Option<Dense>,
}

/// Training mode draws dropout masks and normalizes with batch statistics;
/// inference uses running statistics and no dropout.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Infer,
}

impl Mode<'_> {
    fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Outputs of one branch for one cloud, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    /// Planar centroid removed before the first stage.
    pub centroid: [f64; 2],
    pub coarse_center: [f64; 2],
    pub fine_center: [f64; 2],
    pub angle_logits: Vec<Real>,
    pub angle_residuals: Vec<Real>,
    pub alpha: f64,
    /// Scan frame to canonical frame.
    pub canonical: GroundTransform,
    pub embedding: Vec<Real>,
}

/// Maps scan points into the canonical frame: shift by the accumulated
/// center estimate, then rotate by `−alpha`.
pub fn canonical_transform(center: [f64; 2], alpha: f64) -> GroundTransform {
    GroundTransform::rotation(-alpha).compose(&GroundTransform::translation(-center[0], -center[1]))
}

/// Final alignment of cloud 1 onto cloud 2 from both canonical transforms and
/// the head's canonical-frame transform.
pub fn compose_alignment(n1: &GroundTransform, tf: &GroundTransform, n2: &GroundTransform) -> GroundTransform {
    n2.invert().compose(tf).compose(n1)
}

/// A recorded forward pass over `B` pairs. Rows `0..B` of the branch tensors
/// hold the first clouds, rows `B..2B` the second.
pub struct ForwardPass {
    pub tape: Tape,
    pub pairs: usize,
    /// `[2B, 2]` coarse centers.
    pub coarse: Var,
    /// `[2B, 2 + 2·bins]` fine center, angle logits, angle residuals.
    pub fine: Var,
    /// `[2B, embed]`.
    pub embedding: Var,
    /// `[B, 2 + 2·bins]` translation, angle logits, angle residuals.
    pub head: Var,
    pub centroids: Vec<[f64; 2]>,
    pub fine_bins: Vec<usize>,
    pub bn_stats: Vec<(ParamId, ParamId, BatchStats)>,
    bins: usize,
}

fn row(t: &Tensor, r: usize) -> &[Real] {
    let c = t.last_dim();
    &t.data[r * c..(r + 1) * c]
}

impl ForwardPass {
    fn pose_row(&self, v: Var, r: usize) -> ([f64; 2], &[Real], &[Real]) {
        let data = row(self.tape.value(v), r);
        let b = self.bins;
        ([data[0] as f64, data[1] as f64], &data[2..2 + b], &data[2 + b..2 + 2 * b])
    }

    pub fn branch_output(&self, r: usize) -> BranchOutput {
        let coarse = row(self.tape.value(self.coarse), r);
        let coarse_center = [coarse[0] as f64, coarse[1] as f64];
        let (fine_center, logits, residuals) = self.pose_row(self.fine, r);
        let alpha = angle_decode(logits, residuals);
        let centroid = self.centroids[r];
        let total = [
            centroid[0] + coarse_center[0] + fine_center[0],
            centroid[1] + coarse_center[1] + fine_center[1],
        ];
        BranchOutput {
            centroid,
            coarse_center,
            fine_center,
            angle_logits: logits.to_vec(),
            angle_residuals: residuals.to_vec(),
            alpha,
            canonical: canonical_transform(total, alpha),
            embedding: row(self.tape.value(self.embedding), r).to_vec(),
        }
    }

    pub fn canonical(&self, r: usize) -> GroundTransform {
        self.branch_output(r).canonical
    }

    /// Transform predicted by the final head for pair `p`, in canonical coordinates.
    pub fn head_transform(&self, p: usize) -> GroundTransform {
        let (t, logits, residuals) = self.pose_row(self.head, p);
        GroundTransform::new(t[0], t[1], angle_decode(logits, residuals))
    }

    pub fn alignment(&self, p: usize) -> GroundTransform {
        compose_alignment(&self.canonical(p), &self.head_transform(p), &self.canonical(self.pairs + p))
    }

    pub fn bins(&self) -> usize {
        self.bins
    }
}

/// Siamese canonical-pose network with a final alignment head.
#[derive(Debug, Clone)]
pub struct AlignNet {
    pub config: AlignNetConfig,
    pub params: ParamStore,
    coarse_pn: Mlp,
    coarse_head: Mlp,
    fine_pn: Mlp,
    fine_head: Mlp,
    embed_pn: Mlp,
    final_head: Mlp,
}

fn build_mlp(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input: usize,
    widths: &[usize],
    output: Option<usize>,
) -> Mlp {
    let mut fan_in = input;
    let mut hidden = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        let p = format!("{prefix}.{i}");
        let dense = Dense {
            w: store.insert_linear_weight(&format!("{p}.w"), fan_in, w, rng),
            b: store.insert(format!("{p}.b"), ParamKind::Trainable, Tensor::zeros(&[w])),
        };
        hidden.push(BnLayer {
            dense,
            gamma: store.insert(format!("{p}.bn.gamma"), ParamKind::Trainable, Tensor::filled(&[w], 1.0)),
            beta: store.insert(format!("{p}.bn.beta"), ParamKind::Trainable, Tensor::zeros(&[w])),
            mean: store.insert(format!("{p}.bn.mean"), ParamKind::Buffer, Tensor::zeros(&[w])),
            var: store.insert(format!("{p}.bn.var"), ParamKind::Buffer, Tensor::filled(&[w], 1.0)),
        });
        fan_in = w;
    }
    let out = output.map(|o| Dense {
        w: store.insert_linear_weight(&format!("{prefix}.out.w"), fan_in, o, rng),
        b: store.insert(format!("{prefix}.out.b"), ParamKind::Trainable, Tensor::zeros(&[o])),
    });
    Mlp { hidden, out }
}

impl AlignNet {
    pub fn new(config: AlignNetConfig) -> Result<Self, AlignNetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut s = ParamStore::new();
        let pose = config.pose_width();
        let last = |w: &[usize]| *w.last().unwrap();
        let coarse_pn = build_mlp(&mut s, &mut rng, "coarse.pn", 3, &config.coarse_widths, None);
        let coarse_head = build_mlp(&mut s, &mut rng, "coarse.head", last(&config.coarse_widths), &config.head_widths, Some(2));
        let fine_pn = build_mlp(&mut s, &mut rng, "fine.pn", 3, &config.fine_widths, None);
        let fine_head = build_mlp(&mut s, &mut rng, "fine.head", last(&config.fine_widths), &config.head_widths, Some(pose));
        let embed_pn = build_mlp(&mut s, &mut rng, "embed.pn", 3, &config.embed_widths, None);
        let final_head =
            build_mlp(&mut s, &mut rng, "final.head", 2 * last(&config.embed_widths), &config.head_widths, Some(pose));
        Ok(Self { config, params: s, coarse_pn, coarse_head, fine_pn, fine_head, embed_pn, final_head })
    }

    /// Zeroes the output layers of all three pose heads.
    pub fn zero_heads(&mut self) {
        for head in [&self.coarse_head, &self.fine_head, &self.final_head] {
            let out = head.out.as_ref().unwrap();
            for id in [out.w, out.b] {
                self.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn layers(
        &self,
        tape: &mut Tape,
        mut x: Var,
        mlp: &Mlp,
        mode: &mut Mode,
        dropout_after: bool,
        stats: &mut Vec<(ParamId, ParamId, BatchStats)>,
    ) -> Result<Var, AlignNetError> {
        let p = &self.params;
        for layer in &mlp.hidden {
            let (w, b) = (tape.param(p, layer.dense.w), tape.param(p, layer.dense.b));
            let (g, be) = (tape.param(p, layer.gamma), tape.param(p, layer.beta));
            let h = tape.linear(x, w, b)?;
            let h = if mode.is_train() {
                let (h, s) = tape.batchnorm_train(h, g, be)?;
                stats.push((layer.mean, layer.var, s));
                h
            } else {
                tape.batchnorm_infer(h, g, be, &p.get(layer.mean).data, &p.get(layer.var).data)?
            };
            x = tape.relu(h);
        }
        if dropout_after {
            if let Mode::Train(rng) = mode {
                x = tape.dropout(x, self.config.dropout, &mut **rng)?;
            }
        }
        if let Some(out) = &mlp.out {
            let (w, b) = (tape.param(p, out.w), tape.param(p, out.b));
            x = tape.linear(x, w, b)?;
        }
        Ok(x)
    }

    fn pointnet(
        &self,
        tape: &mut Tape,
        points: Var,
        mlp: &Mlp,
        mode: &mut Mode,
        stats: &mut Vec<(ParamId, ParamId, BatchStats)>,
    ) -> Result<Var, AlignNetError> {
        let h = self.layers(tape, points, mlp, mode, false, stats)?;
        Ok(tape.maxpool_points(h)?)
    }

    fn check_cloud(&self, c: &PointCloud) -> Result<(), AlignNetError> {
        if c.len() != self.config.n_points {
            return Err(AlignNetError::WrongPointCount { expected: self.config.n_points, got: c.len() });
        }
        Ok(())
    }

    /// Stacks clouds into `[C, n, 3]` with each cloud's planar centroid removed.
    fn centered_input(&self, clouds: &[&PointCloud]) -> Result<(Tensor, Vec<[f64; 2]>), AlignNetError> {
        let n = self.config.n_points;
        let mut data = Vec::with_capacity(clouds.len() * n * 3);
        let mut centroids = Vec::with_capacity(clouds.len());
        for c in clouds {
            self.check_cloud(c)?;
            let cen = order_free_centroid(c);
            for p in c.iter() {
                data.push((p.x - cen[0]) as Real);
                data.push((p.y - cen[1]) as Real);
                data.push(p.z as Real);
            }
            centroids.push(cen);
        }
        Ok((Tensor::new(vec![clouds.len(), n, 3], data)?, centroids))
    }

    /// Full forward pass over `B` pairs.
    pub fn forward(
        &self,
        clouds1: &[PointCloud],
        clouds2: &[PointCloud],
        mut mode: Mode,
    ) -> Result<ForwardPass, AlignNetError> {
        if clouds1.is_empty() || clouds1.len() != clouds2.len() {
            return Err(AlignNetError::Batch(format!("{} first clouds, {} second clouds", clouds1.len(), clouds2.len())));
        }
        let b = clouds1.len();
        let all: Vec<&PointCloud> = clouds1.iter().chain(clouds2).collect();
        let (input, centroids) = self.centered_input(&all)?;

        let mut tape = Tape::new();
        let mut stats = Vec::new();
        let bins = self.config.bins;
        let p0 = tape.constant(input);

        let feat = self.pointnet(&mut tape, p0, &self.coarse_pn, &mut mode, &mut stats)?;
        let coarse = self.layers(&mut tape, feat, &self.coarse_head, &mut mode, true, &mut stats)?;
        let p1 = tape.shift_xy(p0, coarse)?;

        let feat = self.pointnet(&mut tape, p1, &self.fine_pn, &mut mode, &mut stats)?;
        let fine = self.layers(&mut tape, feat, &self.fine_head, &mut mode, true, &mut stats)?;
        let fine_center = tape.slice_last(fine, 0, 2)?;
        let p2 = tape.shift_xy(p1, fine_center)?;

        let fine_bins: Vec<usize> = (0..2 * b).map(|r| argmax(&row(tape.value(fine), r)[2..2 + bins])).collect();
        let residuals = tape.slice_last(fine, 2 + bins, 2 + 2 * bins)?;
        let picked = tape.gather_cols(residuals, &fine_bins)?;
        let beta = bin_width(bins);
        let base: Vec<Real> = fine_bins.iter().map(|&i| -(i as f64 * beta) as Real).collect();
        let neg_alpha = tape.affine(picked, -(beta / 2.0) as Real, &base)?;
        let p3 = tape.rotate_z(p2, neg_alpha)?;

        let embedding = self.pointnet(&mut tape, p3, &self.embed_pn, &mut mode, &mut stats)?;
        let e1 = tape.slice_rows(embedding, 0, b)?;
        let e2 = tape.slice_rows(embedding, b, 2 * b)?;
        let joint = tape.concat_last(e1, e2)?;
        let head = self.layers(&mut tape, joint, &self.final_head, &mut mode, true, &mut stats)?;

        Ok(ForwardPass { tape, pairs: b, coarse, fine, embedding, head, centroids, fine_bins, bn_stats: stats, bins })
    }

    /// Canonicalization of single clouds (inference mode, no final head).
    pub fn canonical_forward(&self, clouds: &[PointCloud]) -> Result<Vec<BranchOutput>, AlignNetError> {
        if clouds.is_empty() {
            return Ok(Vec::new());
        }
        // The branch rows are independent in inference mode, so pairing each
        // cloud with itself and keeping the first half is exact.
        let fwd = self.forward(clouds, clouds, Mode::Infer)?;
        Ok((0..clouds.len()).map(|r| fwd.branch_output(r)).collect())
    }

    /// Ground transform mapping cloud 1 onto cloud 2.
    pub fn align(&self, c1: &PointCloud, c2: &PointCloud) -> Result<GroundTransform, AlignNetError> {
        Ok(self.align_batch(std::slice::from_ref(c1), std::slice::from_ref(c2))?[0])
    }

    pub fn align_batch(&self, clouds1: &[PointCloud], clouds2: &[PointCloud]) -> Result<Vec<GroundTransform>, AlignNetError> {
        let fwd = self.forward(clouds1, clouds2, Mode::Infer)?;
        Ok((0..fwd.pairs).map(|p| fwd.alignment(p)).collect())
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn commit_bn_stats(&mut self, stats: &[(ParamId, ParamId, BatchStats)], decay: f64) {
        for (mean, var, s) in stats {
            self.params.blend(*mean, &s.mean, decay);
            self.params.blend(*var, &s.var, decay);
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignNetError> {
        let config_json = serde_json::to_string(&self.config).expect("config serializes");
        save_checkpoint(path, &Checkpoint { config_json, params: self.params.clone() })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AlignNetError> {
        let ckpt = load_checkpoint(path)?;
        let config: AlignNetConfig =
            serde_json::from_str(&ckpt.config_json).map_err(|e| AlignNetError::Config(format!("checkpoint config: {e}")))?;
        let mut net = Self::new(config)?;
        if ckpt.params.len() != net.params.len() {
            return Err(AlignNetError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                ckpt.params.len(),
                net.params.len()
            )));
        }
        for id in net.params.ids().collect::<Vec<_>>() {
            let name = net.params.name(id).to_string();
            let src = ckpt.params.find(&name).ok_or_else(|| AlignNetError::Config(format!("checkpoint lacks {name}")))?;
            let t = ckpt.params.get(src);
            if t.shape != net.params.get(id).shape {
                return Err(AlignNetError::Config(format!("{name}: shape {:?} in checkpoint", t.shape)));
            }
            *net.params.get_mut(id) = t.clone();
        }
        Ok(net)
    }
}

/// Planar centroid that does not depend on point order: coordinates are
/// summed in sorted order.
pub fn order_free_centroid(c: &PointCloud) -> [f64; 2] {
    let mut xs: Vec<f64> = c.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = c.iter().map(|p| p.y).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let n = c.len().max(1) as f64;
    [xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n]
}
