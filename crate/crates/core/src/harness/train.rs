use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{augment, fixed_inputs, sample_points};
use super::HarnessError;
use crate::alignnet::{compute_targets, staged_loss, AlignNet, AlignNetConfig, LossBreakdown, LossConfig, Mode, PairTruth};
use crate::autodiff::{bn_decay, AdamState};
use crate::geom::PointCloud;
use crate::synth::SceneSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Factor applied to the learning rate every `lr_step_epochs`.
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub batch: usize,
    pub n_points: usize,
    pub aug_sigma: f64,
    pub aug_clip: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
    /// Draw a fresh point subset each time a pair is used. When off, each
    /// pair keeps the subset given by [`fixed_inputs`].
    pub resample_points: bool,
    /// After the last step, replace the batch-norm running statistics with
    /// their average over the training set under the final weights.
    pub recalibrate_bn: bool,
    /// Layer widths and dropout. `n_points` is overridden by the field above.
    pub network: AlignNetConfig,
    pub dataset: Option<PathBuf>,
    pub val_dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.005,
            lr_decay: 0.5,
            lr_step_epochs: 30,
            batch: 128,
            n_points: 512,
            aug_sigma: 0.01,
            aug_clip: 0.05,
            seed: 0,
            checkpoint_every: 10,
            max_steps: 0,
            resample_points: true,
            recalibrate_bn: false,
            network: AlignNetConfig::default(),
            dataset: None,
            val_dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.n_points < 1 {
            return bad("n_points must be at least 1");
        }
        if self.batch < 2 {
            return bad("batch must be at least 2 for batch normalization");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || self.lr_step_epochs < 1 {
            return bad("need lr > 0, lr_decay > 0 and lr_step_epochs >= 1");
        }
        if !(self.aug_sigma >= 0.0) || !(self.aug_clip >= 0.0) {
            return bad("augmentation sigma and clip must be non-negative");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (counted from 0).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step_epochs) as i32)
    }

    pub fn network_config(&self, loss: &LossConfig) -> AlignNetConfig {
        AlignNetConfig { n_points: self.n_points, axis_symmetric: loss.axis_symmetric, ..self.network.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,lr,total,transl_s1,transl_s2,transl_s3,angle_s2,angle_s3";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, l.total, l.transl_s1, l.transl_s2, l.transl_s3, l.angle_s2, l.angle_s3
        )
    }
}

type BatchInputs = (Vec<PointCloud>, Vec<PointCloud>, Vec<PairTruth>);

/// Optimizer state plus the network, advanced one batch at a time.
pub struct Trainer {
    pub net: AlignNet,
    pub cfg: TrainConfig,
    pub loss: LossConfig,
    adam: AdamState,
    dropout_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, loss: LossConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        loss.validate()?;
        let net = AlignNet::new(cfg.network_config(&loss))?;
        Ok(Self::resume(net, cfg, loss))
    }

    /// Continues from existing weights with fresh optimizer moments.
    pub fn resume(net: AlignNet, cfg: TrainConfig, loss: LossConfig) -> Self {
        let adam = AdamState::new(&net.params, cfg.lr);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(1);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sample_rng.set_stream(2);
        Self { net, cfg, loss, adam, dropout_rng, sample_rng, steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Network inputs for dataset entry `index`, augmented if configured.
    pub fn inputs(&mut self, sample: &SceneSample, index: usize) -> Result<(PointCloud, PointCloud), HarnessError> {
        let n = self.cfg.n_points;
        let (a, b) = if self.cfg.resample_points {
            (sample_points(&sample.cloud1, n, &mut self.sample_rng)?, sample_points(&sample.cloud2, n, &mut self.sample_rng)?)
        } else {
            fixed_inputs(sample, index, n, self.cfg.seed)?
        };
        let (sigma, clip) = (self.cfg.aug_sigma, self.cfg.aug_clip);
        Ok((augment(&a, sigma, clip, &mut self.sample_rng), augment(&b, sigma, clip, &mut self.sample_rng)))
    }

    /// One optimizer step on the given dataset entries.
    fn batch_inputs(
        &mut self,
        samples: &[SceneSample],
        indices: &[usize],
    ) -> Result<BatchInputs, HarnessError> {
        let (mut c1, mut c2, mut truth) = (Vec::new(), Vec::new(), Vec::new());
        for &i in indices {
            let (a, b) = self.inputs(&samples[i], i)?;
            c1.push(a);
            c2.push(b);
            truth.push(PairTruth::from(&samples[i]));
        }
        Ok((c1, c2, truth))
    }

    /// Sets every running mean and variance to the average of its batch
    /// statistics over `batches`, with the weights held fixed.
    pub fn recalibrate_bn<'a>(
        &mut self,
        samples: &[SceneSample],
        batches: impl IntoIterator<Item = &'a [usize]>,
    ) -> Result<(), HarnessError> {
        // Stats come before the dropout layer, so its mask is irrelevant;
        // a private stream keeps the training stream untouched.
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(3);
        for (k, indices) in batches.into_iter().enumerate() {
            let (c1, c2, _) = self.batch_inputs(samples, indices)?;
            let fwd = self.net.forward(&c1, &c2, Mode::Train(&mut rng))?;
            self.net.commit_bn_stats(&fwd.bn_stats, k as f64 / (k + 1) as f64);
        }
        Ok(())
    }

    pub fn step(&mut self, samples: &[SceneSample], indices: &[usize], epoch: usize) -> Result<LossRecord, HarnessError> {
        let (c1, c2, truth) = self.batch_inputs(samples, indices)?;
        let mut fwd = self.net.forward(&c1, &c2, Mode::Train(&mut self.dropout_rng))?;
        let targets = compute_targets(&fwd, &truth)?;
        let loss = staged_loss(&mut fwd, &targets, &self.loss)?;
        let record = LossRecord { epoch, step: self.steps, lr: self.cfg.lr_at(epoch), loss: loss.breakdown };
        if !loss.breakdown.total.is_finite() {
            return Err(HarnessError::NonFiniteLoss { step: self.steps, breakdown: loss.breakdown });
        }
        let grads = fwd.tape.backward(loss.total)?;
        self.adam.lr = record.lr;
        self.adam.update(&mut self.net.params, &fwd.tape.param_grads(&grads))?;
        self.net.commit_bn_stats(&fwd.bn_stats, bn_decay(epoch));
        self.steps += 1;
        Ok(record)
    }
}

pub struct TrainOutcome {
    pub net: AlignNet,
    pub curve: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Full training run. With `out_dir`, writes `loss.csv`, periodic
/// `epoch_NNNN.ckpt` files and `final.ckpt`.
pub fn train(
    samples: &[SceneSample],
    cfg: &TrainConfig,
    loss: &LossConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut trainer = Trainer::new(cfg.clone(), *loss)?;
    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(write_err(dir))?;
            let path = dir.join("loss.csv");
            let mut f = fs::File::create(&path).map_err(write_err(&path))?;
            writeln!(f, "{LOSS_CSV_HEADER}").map_err(write_err(&path))?;
            Some((f, path))
        }
        None => None,
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let (mut curve, mut checkpoints) = (Vec::new(), Vec::new());
    let capped = |t: &Trainer| cfg.max_steps > 0 && t.steps() >= cfg.max_steps;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch) {
            if capped(&trainer) {
                break 'epochs;
            }
            let record = trainer.step(samples, batch, epoch)?;
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{}", record.csv_row()).map_err(write_err(path))?;
            }
            on_step(&record);
            curve.push(record);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
                trainer.net.save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if cfg.recalibrate_bn {
        let all: Vec<usize> = (0..samples.len()).collect();
        trainer.recalibrate_bn(samples, all.chunks(cfg.batch))?;
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.ckpt");
        trainer.net.save(&path)?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome { net: trainer.net, curve, checkpoints })
}
