//! Adam on binary cross-entropy with mixup, plateau halving of the learning
//! rate, early stopping and best-checkpoint selection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::metrics::{mean_ap, PredictionSet};
use crate::model::{clip_scores, Checkpoint, Mode, Network, TensorMap};
use crate::ops::elementwise;
use crate::rng::{derive, ChaCha8Rng};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

fn default_min_delta() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub earlystop_patience: usize,
    #[serde(default)]
    pub mixup_alpha: Option<f64>,
    pub seed: u64,
    /// Smallest validation mAP gain that counts as an improvement.
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

impl TrainConfig {
    /// Full-scale settings: lr 3e-5, batch 128, up to 150 epochs, halving
    /// after 10 flat epochs, stopping after 20.
    pub fn full_scale(seed: u64) -> Self {
        TrainConfig {
            lr: 3e-5,
            batch_size: 128,
            max_epochs: 150,
            plateau_patience: 10,
            earlystop_patience: 20,
            mixup_alpha: None,
            seed,
            min_delta: 1e-4,
        }
    }

    /// Desk-scale defaults for the synthetic task.
    pub fn desk(seed: u64) -> Self {
        TrainConfig { lr: 1e-3, batch_size: 32, max_epochs: 60, ..Self::full_scale(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            errs.push(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".into());
        }
        if self.plateau_patience == 0 || self.earlystop_patience == 0 {
            errs.push("patiences must be at least 1".into());
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0) || !a.is_finite() {
                errs.push(format!("mixup alpha must be positive, got {a}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Adam moments for every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f32,
    pub m: TensorMap,
    pub v: TensorMap,
}

impl AdamState {
    pub fn new(params: &TensorMap, lr: f32) -> Self {
        let zeros: TensorMap = params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        AdamState { step: 0, lr, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam step over all parameters that have a gradient.
    pub fn apply(&mut self, params: &mut TensorMap, grads: &[(String, Tensor)]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::powf(ADAM_BETA1, t as f32);
        let c2 = 1.0 - libm::powf(ADAM_BETA2, t as f32);
        for (name, g) in grads {
            let (Some(p), Some(m), Some(v)) = (params.get_mut(name), self.m.get_mut(name), self.v.get_mut(name)) else {
                continue;
            };
            for (((pi, mi), vi), &gi) in
                p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= self.lr * mhat / (libm::sqrtf(vhat) + ADAM_EPS);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: f64,
    /// Validation BCE of the clip-level scores; breaks ties in `val_map`.
    #[serde(default)]
    pub val_loss: f64,
    pub lr: f32,
}

/// Mean binary cross-entropy of probabilities against (soft) targets.
pub fn bce_loss(scores: &Tensor, targets: &Tensor) -> Result<f64> {
    if scores.shape() != targets.shape() {
        return Err(dim_err("bce_loss", format!("{:?} vs {:?}", scores.shape(), targets.shape())));
    }
    Ok(elementwise::bce(scores.data(), targets.data()))
}

/// One mixing coefficient and partner for a batch element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixupDraw {
    pub lambda: f32,
    pub partner: usize,
}

/// Per-example `lambda ~ Beta(alpha, alpha)` and partners from a random
/// permutation of the batch.
pub fn mixup_draws(n: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<MixupDraw>> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Argument(format!("mixup alpha {alpha}: {e}")))?;
    let mut partners: Vec<usize> = (0..n).collect();
    partners.shuffle(rng);
    Ok(partners
        .into_iter()
        .map(|partner| MixupDraw { lambda: beta.sample(rng) as f32, partner })
        .collect())
}

/// `x'_i = l x_i + (1 - l) x_j`, `y'_i = l y_i + (1 - l) y_j` along the batch axis.
pub fn mixup_apply(x: &Tensor, y: &Tensor, draws: &[MixupDraw]) -> Result<(Tensor, Tensor)> {
    let n = *x.shape().first().ok_or_else(|| dim_err("mixup", "rank-0 input"))?;
    if y.shape().first() != Some(&n) || draws.len() != n {
        return Err(dim_err("mixup", format!("x {:?}, y {:?}, {} draws", x.shape(), y.shape(), draws.len())));
    }
    let mix = |t: &Tensor| -> Result<Tensor> {
        let per = t.len() / n;
        let mut out = Vec::with_capacity(t.len());
        for (i, d) in draws.iter().enumerate() {
            let (a, b) = (&t.data()[i * per..(i + 1) * per], &t.data()[d.partner * per..(d.partner + 1) * per]);
            out.extend(a.iter().zip(b).map(|(&u, &v)| {
                if d.lambda == 1.0 {
                    u
                } else if d.lambda == 0.0 {
                    v
                } else {
                    d.lambda * u + (1.0 - d.lambda) * v
                }
            }));
        }
        Tensor::new(t.shape().to_vec(), out)
    };
    Ok((mix(x)?, mix(y)?))
}

pub fn mixup_batch(x: &Tensor, y: &Tensor, alpha: f64, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let draws = mixup_draws(x.shape()[0], alpha, rng)?;
    mixup_apply(x, y, &draws)
}

/// One training patch with its (clip-level) target vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// `[1, T, F]`.
    pub input: Tensor,
    pub target: Vec<f32>,
}

/// All patches of one clip with its binary targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipInputs {
    pub id: String,
    pub inputs: Vec<Tensor>,
    pub target: Vec<f32>,
}

/// Clip-level predictions (mean of patch scores) for a set of clips.
pub fn predict_clips(net: &Network, clips: &[ClipInputs], batch_size: usize) -> Result<PredictionSet> {
    let classes = net.config().num_classes;
    let mut scores = Vec::with_capacity(clips.len() * classes);
    let mut targets = Vec::with_capacity(clips.len() * classes);
    for clip in clips {
        let patch_scores = net.predict(&clip.inputs, batch_size)?;
        scores.extend(clip_scores(&patch_scores)?);
        if clip.target.len() != classes {
            return Err(dim_err("predict_clips", format!("{}: {} targets for {classes} classes", clip.id, clip.target.len())));
        }
        targets.extend_from_slice(&clip.target);
    }
    PredictionSet::new(
        clips.iter().map(|c| c.id.clone()).collect(),
        Tensor::new(vec![clips.len(), classes], scores)?,
        Tensor::new(vec![clips.len(), classes], targets)?,
    )
}

pub struct TrainOutcome {
    /// Snapshot from the epoch with the best validation mAP.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn batch_tensors(train: &[Example], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<&Tensor> = idx.iter().map(|&i| &train[i].input).collect();
    let x = Tensor::stack(&inputs)?;
    let classes = train[idx[0]].target.len();
    let y: Vec<f32> = idx.iter().flat_map(|&i| train[i].target.iter().copied()).collect();
    Ok((x, Tensor::new(vec![idx.len(), classes], y)?))
}

/// Runs one epoch of minibatch updates and returns the mean training loss.
pub fn train_epoch(
    net: &mut Network,
    opt: &mut AdamState,
    train: &[Example],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0f64;
    for idx in order.chunks(config.batch_size) {
        let (mut x, mut y) = batch_tensors(train, idx)?;
        if let Some(alpha) = config.mixup_alpha {
            (x, y) = mixup_batch(&x, &y, alpha, rng)?;
        }
        let mut pass = net.record(&x, Mode::Train, true)?;
        let loss = pass.tape.bce(pass.output, y)?;
        let loss_value = pass.tape.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Diverged { epoch: 0, loss: loss_value });
        }
        let mut grads = pass.tape.backward(loss)?;
        let named: Vec<(String, Tensor)> = pass
            .params
            .iter()
            .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect();
        opt.apply(net.params_mut(), &named);
        net.update_running_stats(&pass.bn_stats);
        loss_sum += loss_value * idx.len() as f64;
    }
    Ok(loss_sum / train.len() as f64)
}

/// Trains until `max_epochs` or early stopping and returns the best snapshot.
///
/// After every epoch the validation mAP is computed; it improves when it
/// beats the best so far by at least `min_delta`. The learning rate halves
/// after `plateau_patience` epochs without improvement and training stops
/// after `earlystop_patience`. The returned snapshot is the epoch with the
/// highest validation mAP; ties go to the lower validation loss, then to the
/// earlier epoch.
pub fn train(net: Network, train_set: &[Example], val_set: &[ClipInputs], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }
    let mut net = net;
    let mut rng = derive(config.seed, "train");
    let mut opt = AdamState::new(net.params(), config.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, Network, AdamState, usize)> = None;
    let mut reference = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut since_plateau = 0;
    for epoch in 1..=config.max_epochs {
        let lr = opt.lr;
        let train_loss = train_epoch(&mut net, &mut opt, train_set, config, &mut rng).map_err(|e| match e {
            Error::Diverged { loss, .. } => Error::Diverged { epoch, loss },
            e => e,
        })?;
        let preds = predict_clips(&net, val_set, config.batch_size)?;
        let val_map = mean_ap(&preds)?;
        let val_loss = bce_loss(&preds.scores, &preds.targets)?;
        history.push(EpochRecord { epoch, train_loss, val_map, val_loss, lr });

        if best.as_ref().is_none_or(|(b, l, ..)| val_map > *b || (val_map == *b && val_loss < *l)) {
            best = Some((val_map, val_loss, net.clone(), opt.clone(), epoch));
        }
        if val_map >= reference + config.min_delta {
            reference = val_map;
            since_best = 0;
            since_plateau = 0;
        } else {
            since_best += 1;
            since_plateau += 1;
            if since_plateau >= config.plateau_patience {
                opt.lr /= 2.0;
                since_plateau = 0;
            }
            if since_best >= config.earlystop_patience {
                break;
            }
        }
    }
    let (_, _, best_net, best_opt, best_epoch) = best.expect("at least one epoch ran");
    let checkpoint = best_net.to_checkpoint(best_epoch, Some(best_opt), history.clone());
    Ok(TrainOutcome { checkpoint, history })
}

/// Draws `n` values from `Beta(alpha, alpha)`.
pub fn sample_beta(alpha: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Argument(format!("beta({alpha}): {e}")))?;
    Ok((0..n).map(|_| beta.sample(rng)).collect())
}
