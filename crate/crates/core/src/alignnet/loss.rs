use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::angle::angle_encode;
use super::model::ForwardPass;
use super::AlignNetError;
use crate::autodiff::{Real, Tape, Var};
use crate::geom::GroundTransform;
use crate::synth::SceneSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the stage-1 and stage-2 terms.
    pub lambda1: f64,
    /// Weight of the angle terms against the translation terms.
    pub lambda2: f64,
    pub delta_stage12: f64,
    pub delta_stage3: f64,
    pub reg_weight: f64,
    /// Treat θ and θ+π as the same heading.
    pub axis_symmetric: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: 0.5, lambda2: 1.0, delta_stage12: 1.0, delta_stage3: 2.0, reg_weight: 20.0, axis_symmetric: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), AlignNetError> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(AlignNetError::Config("lambda1 and lambda2 must be positive".into()));
        }
        if !(self.delta_stage12 > 0.0 && self.delta_stage3 > 0.0) {
            return Err(AlignNetError::Config("Huber deltas must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth of one scan pair, in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTruth {
    pub center1: [f64; 2],
    pub center2: [f64; 2],
    pub heading1: f64,
    pub heading2: f64,
    /// Maps cloud-1 points onto cloud 2.
    pub gt: GroundTransform,
}

impl From<&SceneSample> for PairTruth {
    fn from(s: &SceneSample) -> Self {
        Self {
            center1: [s.center1.x, s.center1.y],
            center2: [s.center2.x, s.center2.y],
            heading1: s.heading1,
            heading2: s.heading2,
            gt: s.gt,
        }
    }
}

/// Regression targets for one forward pass. Rows follow the branch layout of
/// [`ForwardPass`]; everything here is a constant for differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    /// Object center relative to the input centroid.
    pub stage1: Vec<[f64; 2]>,
    /// Object center relative to the coarse-shifted frame.
    pub stage2: Vec<[f64; 2]>,
    pub heading: Vec<f64>,
    /// Transform the final head should output, per pair.
    pub stage3: Vec<GroundTransform>,
}

/// Derives targets from ground truth and the current predictions.
pub fn compute_targets(fwd: &ForwardPass, truth: &[PairTruth]) -> Result<LossTargets, AlignNetError> {
    let b = fwd.pairs;
    if truth.len() != b {
        return Err(AlignNetError::MissingTargets(format!("{} truths for {b} pairs", truth.len())));
    }
    let coarse = fwd.tape.value(fwd.coarse);
    let mut t = LossTargets { stage1: Vec::new(), stage2: Vec::new(), heading: Vec::new(), stage3: Vec::new() };
    for r in 0..2 * b {
        let (center, heading) = if r < b { (truth[r].center1, truth[r].heading1) } else { (truth[r - b].center2, truth[r - b].heading2) };
        let cen = fwd.centroids[r];
        let s1 = [center[0] - cen[0], center[1] - cen[1]];
        let s2 = [s1[0] - coarse.data[2 * r] as f64, s1[1] - coarse.data[2 * r + 1] as f64];
        t.stage1.push(s1);
        t.stage2.push(s2);
        t.heading.push(heading);
    }
    for (p, truth) in truth.iter().enumerate() {
        let n1 = fwd.canonical(p);
        let n2 = fwd.canonical(b + p);
        t.stage3.push(n2.compose(&truth.gt).compose(&n1.invert()));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub transl_s1: f64,
    pub transl_s2: f64,
    pub transl_s3: f64,
    pub angle_s2: f64,
    pub angle_s3: f64,
    pub total: f64,
}

pub struct StagedLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn flat(v: &[[f64; 2]]) -> Vec<Real> {
    v.iter().flat_map(|p| [p[0] as Real, p[1] as Real]).collect()
}

fn translation_term(tape: &mut Tape, pred: Var, target: &[Real], delta: f64) -> Result<Var, AlignNetError> {
    let rows = tape.huber(pred, target, delta)?;
    Ok(tape.mean(rows))
}

fn angle_rows(
    tape: &mut Tape,
    logits: Var,
    residuals: Var,
    thetas: &[f64],
    bins: usize,
    cfg: &LossConfig,
) -> Result<Var, AlignNetError> {
    let enc: Vec<_> = thetas.iter().map(|&t| angle_encode(t, bins)).collect();
    let idx: Vec<usize> = enc.iter().map(|e| e.bin).collect();
    let res: Vec<Real> = enc.iter().map(|e| e.residual_norm as Real).collect();
    let ce = tape.softmax_cross_entropy(logits, &idx)?;
    let picked = tape.gather_cols(residuals, &idx)?;
    let reg = tape.huber(picked, &res, 1.0)?;
    let reg = tape.scale(reg, cfg.reg_weight as Real);
    Ok(tape.add(ce, reg)?)
}

fn angle_term(
    tape: &mut Tape,
    pose: Var,
    thetas: &[f64],
    bins: usize,
    cfg: &LossConfig,
) -> Result<Var, AlignNetError> {
    let logits = tape.slice_last(pose, 2, 2 + bins)?;
    let residuals = tape.slice_last(pose, 2 + bins, 2 + 2 * bins)?;
    let mut rows = angle_rows(tape, logits, residuals, thetas, bins, cfg)?;
    if cfg.axis_symmetric {
        let flipped: Vec<f64> = thetas.iter().map(|t| t + PI).collect();
        let alt = angle_rows(tape, logits, residuals, &flipped, bins, cfg)?;
        rows = tape.minimum(rows, alt)?;
    }
    Ok(tape.mean(rows))
}

/// `λ1(Lt1 + Lt2) + Lt3 + λ2(λ1·La2 + La3)`, where translation terms are
/// Huber penalties summed over coordinates and averaged over rows, and angle
/// terms are cross entropy plus weighted Huber on the true bin's residual.
pub fn staged_loss(fwd: &mut ForwardPass, targets: &LossTargets, cfg: &LossConfig) -> Result<StagedLoss, AlignNetError> {
    let (b, bins) = (fwd.pairs, fwd.bins());
    if targets.stage1.len() != 2 * b || targets.stage2.len() != 2 * b || targets.heading.len() != 2 * b || targets.stage3.len() != b {
        return Err(AlignNetError::MissingTargets("target counts do not match the batch".into()));
    }
    let (coarse, fine, head) = (fwd.coarse, fwd.fine, fwd.head);
    let tape = &mut fwd.tape;

    let lt1 = translation_term(tape, coarse, &flat(&targets.stage1), cfg.delta_stage12)?;
    let fine_center = tape.slice_last(fine, 0, 2)?;
    let lt2 = translation_term(tape, fine_center, &flat(&targets.stage2), cfg.delta_stage12)?;
    let head_t = tape.slice_last(head, 0, 2)?;
    let s3: Vec<[f64; 2]> = targets.stage3.iter().map(|t| [t.tx, t.ty]).collect();
    let lt3 = translation_term(tape, head_t, &flat(&s3), cfg.delta_stage3)?;

    let la2 = angle_term(tape, fine, &targets.heading, bins, cfg)?;
    let yaw3: Vec<f64> = targets.stage3.iter().map(|t| t.yaw).collect();
    let la3 = angle_term(tape, head, &yaw3, bins, cfg)?;

    let early = tape.add(lt1, lt2)?;
    let early = tape.scale(early, cfg.lambda1 as Real);
    let transl = tape.add(early, lt3)?;
    let a2 = tape.scale(la2, cfg.lambda1 as Real);
    let angle = tape.add(a2, la3)?;
    let angle = tape.scale(angle, cfg.lambda2 as Real);
    let total = tape.add(transl, angle)?;

    let v = |x: Var| tape.value(x).item() as f64;
    let breakdown = LossBreakdown {
        transl_s1: v(lt1),
        transl_s2: v(lt2),
        transl_s3: v(lt3),
        angle_s2: v(la2),
        angle_s3: v(la3),
        total: v(total),
    };
    Ok(StagedLoss { total, breakdown })
}
