//! VGG-style network with pluggable pooling layers.
//!
//! Each block is `convs_per_block` 3x3 convolutions, each followed by batch
//! norm and ReLU, optionally with a dense 3x3 max-pool (intra-block pooling)
//! between consecutive convolutions. A pooling layer sits between
//! consecutive blocks. The head averages over frequency, takes the maximum
//! over time, and applies one dense layer with sigmoid outputs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::ops::BatchNormStats;
use crate::patch::{MEL_BANDS, PATCH_FRAMES};
use crate::pooling::{binomial_kernel, pooling_on_tape, LpfSpec, PoolingSpec};
use crate::rng::seeded;
use crate::tape::{Tape, Var};
use crate::tensor::{Padding, Tensor};
use crate::train::{AdamState, EpochRecord};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;
/// Size of the dense max-pool used for intra-block pooling.
pub const IBP_SIZE: usize = 3;

/// Named tensors in a stable (sorted) order.
pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn default_convs() -> usize {
    2
}
fn default_kernel() -> (usize, usize) {
    (3, 3)
}
fn default_input() -> (usize, usize) {
    (PATCH_FRAMES, MEL_BANDS)
}

/// Full network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub block_widths: Vec<usize>,
    #[serde(default = "default_convs")]
    pub convs_per_block: usize,
    #[serde(default = "default_kernel")]
    pub kernel: (usize, usize),
    #[serde(default)]
    pub ibp: bool,
    /// One pooling layer between each pair of consecutive blocks.
    pub pooling: Vec<PoolingSpec>,
    pub num_classes: usize,
    #[serde(default = "default_input")]
    pub input_shape: (usize, usize),
}

impl ModelConfig {
    /// Four blocks of widths 32/64/128/256 with 2x2 max-pooling between them.
    pub fn vgg41(num_classes: usize) -> Self {
        ModelConfig {
            block_widths: vec![32, 64, 128, 256],
            convs_per_block: 2,
            kernel: (3, 3),
            ibp: false,
            pooling: vec![PoolingSpec::max_pool(2); 3],
            num_classes,
            input_shape: default_input(),
        }
    }

    /// VGG41 with every width doubled.
    pub fn vgg42(num_classes: usize) -> Self {
        Self::vgg41(num_classes).widened(2)
    }

    /// Two blocks of widths 8/16 for desk-scale runs.
    pub fn micro(num_classes: usize) -> Self {
        ModelConfig {
            block_widths: vec![8, 16],
            convs_per_block: 2,
            kernel: (3, 3),
            ibp: false,
            pooling: vec![PoolingSpec::max_pool(2)],
            num_classes,
            input_shape: default_input(),
        }
    }

    pub fn widened(mut self, factor: usize) -> Self {
        for w in &mut self.block_widths {
            *w *= factor;
        }
        self
    }

    /// Same network with every pooling layer replaced by `spec`.
    pub fn with_pooling(mut self, spec: PoolingSpec) -> Self {
        for p in &mut self.pooling {
            *p = spec;
        }
        self
    }

    pub fn with_ibp(mut self, ibp: bool) -> Self {
        self.ibp = ibp;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.block_widths.is_empty() {
            errs.push("at least one block is required".into());
        }
        if self.block_widths.contains(&0) {
            errs.push("block widths must be positive".into());
        }
        if self.convs_per_block == 0 {
            errs.push("convs_per_block must be at least 1".into());
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            errs.push("convolution kernel must be non-empty".into());
        }
        if self.num_classes == 0 {
            errs.push("num_classes must be positive".into());
        }
        if self.input_shape.0 == 0 || self.input_shape.1 == 0 {
            errs.push("input shape must be non-empty".into());
        }
        let want = self.block_widths.len().saturating_sub(1);
        if self.pooling.len() != want {
            errs.push(format!(
                "{} blocks need {want} pooling layers between them, got {}",
                self.block_widths.len(),
                self.pooling.len()
            ));
        }
        for (i, p) in self.pooling.iter().enumerate() {
            if let Err(e) = p.validate() {
                errs.extend(e.into_iter().map(|m| format!("pooling[{i}]: {m}")));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn conv_name(b: usize, i: usize) -> String {
    format!("block{b}.conv{i}")
}
fn bn_name(b: usize, i: usize) -> String {
    format!("block{b}.bn{i}")
}
fn pool_name(b: usize) -> String {
    format!("pool{b}")
}

/// Low-pass kernel shape for a layer with `channels` channels.
fn lpf_shape(l: &LpfSpec, channels: usize) -> Vec<usize> {
    if l.shared {
        vec![l.rows, l.cols]
    } else {
        vec![channels, l.rows, l.cols]
    }
}

/// A built network: trainable parameters plus non-trainable buffers
/// (batch-norm running statistics and fixed binomial kernels).
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ModelConfig,
    params: TensorMap,
    buffers: TensorMap,
}

/// The tape of one forward pass together with handles to its parameters.
pub struct ForwardPass {
    pub tape: Tape,
    pub output: Var,
    pub params: Vec<(String, Var)>,
    pub bn_stats: Vec<(String, BatchNormStats)>,
}

impl Network {
    /// Builds and initializes a network: Kaiming-uniform convolutions,
    /// Xavier-uniform head, zero biases, unit BN scale, zero TLPF logits.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut params = TensorMap::new();
        let mut buffers = TensorMap::new();
        let (kh, kw) = config.kernel;
        let mut in_ch = 1;
        for (b, &width) in config.block_widths.iter().enumerate() {
            for i in 0..config.convs_per_block {
                let fan_in = in_ch * kh * kw;
                let bound = libm::sqrtf(6.0 / fan_in as f32);
                let w = Tensor::from_fn(&[width, in_ch, kh, kw], |_| rng.random_range(-bound..bound));
                params.insert(format!("{}.weight", conv_name(b, i)), w);
                params.insert(format!("{}.bias", conv_name(b, i)), Tensor::zeros(&[width]));
                params.insert(format!("{}.gamma", bn_name(b, i)), Tensor::full(&[width], 1.0));
                params.insert(format!("{}.beta", bn_name(b, i)), Tensor::zeros(&[width]));
                buffers.insert(format!("{}.running_mean", bn_name(b, i)), Tensor::zeros(&[width]));
                buffers.insert(format!("{}.running_var", bn_name(b, i)), Tensor::full(&[width], 1.0));
                in_ch = width;
            }
            if let Some(spec) = config.pooling.get(b) {
                if let Some(l) = &spec.lpf {
                    let shape = lpf_shape(l, width);
                    if l.trainable {
                        params.insert(format!("{}.lpf_logits", pool_name(b)), Tensor::zeros(&shape));
                    } else {
                        let k = binomial_kernel(l.rows, l.cols)?;
                        let reps = if l.shared { 1 } else { width };
                        let data = (0..reps).flat_map(|_| k.weights().data().iter().copied()).collect();
                        buffers.insert(format!("{}.lpf_kernel", pool_name(b)), Tensor::new(shape, data)?);
                    }
                }
            }
        }
        let bound = libm::sqrtf(6.0 / (in_ch + config.num_classes) as f32);
        params.insert(
            "head.weight".into(),
            Tensor::from_fn(&[in_ch, config.num_classes], |_| rng.random_range(-bound..bound)),
        );
        params.insert("head.bias".into(), Tensor::zeros(&[config.num_classes]));
        Ok(Network { config, params, buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &TensorMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorMap {
        &mut self.params
    }

    pub fn buffers(&self) -> &TensorMap {
        &self.buffers
    }

    /// Number of trainable weights.
    pub fn trainable_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Number of fixed low-pass weights (binomial kernels).
    pub fn fixed_filter_count(&self) -> usize {
        self.buffers.iter().filter(|(k, _)| k.ends_with(".lpf_kernel")).map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (n, c, h, w) = x.dims4()?;
        if c != 1 || (h, w) != self.config.input_shape {
            return Err(dim_err(
                "forward",
                format!(
                    "expected [N, 1, {}, {}], got {:?}",
                    self.config.input_shape.0,
                    self.config.input_shape.1,
                    x.shape()
                ),
            ));
        }
        Ok(n)
    }

    /// Records a forward pass. With `track_grad`, parameters are tape leaves
    /// that receive gradients.
    pub fn record(&self, x: &Tensor, mode: Mode, track_grad: bool) -> Result<ForwardPass> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut handles: BTreeMap<&str, Var> = BTreeMap::new();
        for (name, t) in &self.params {
            let v = if track_grad { tape.param(t.clone()) } else { tape.constant(t.clone()) };
            handles.insert(name.as_str(), v);
        }
        let p = |name: String| -> Var { handles[name.as_str()] };
        let mut bn_stats = Vec::new();
        let mut h = tape.constant(x.clone());
        for b in 0..self.config.block_widths.len() {
            for i in 0..self.config.convs_per_block {
                let conv = conv_name(b, i);
                let bn = bn_name(b, i);
                h = tape.conv2d(h, p(format!("{conv}.weight")), Some(p(format!("{conv}.bias"))), (1, 1), Padding::Same)?;
                let (gamma, beta) = (p(format!("{bn}.gamma")), p(format!("{bn}.beta")));
                h = match mode {
                    Mode::Train => {
                        let (v, stats) = tape.batch_norm_train(h, gamma, beta, BN_EPS)?;
                        bn_stats.push((bn, stats));
                        v
                    }
                    Mode::Eval => {
                        let mean = &self.buffers[&format!("{bn}.running_mean")];
                        let var = &self.buffers[&format!("{bn}.running_var")];
                        tape.batch_norm_eval(h, gamma, beta, mean.data(), var.data(), BN_EPS)?
                    }
                };
                h = tape.relu(h);
                if self.config.ibp && i + 1 < self.config.convs_per_block {
                    h = tape.max_pool_dense(h, IBP_SIZE)?;
                }
            }
            if let Some(spec) = self.config.pooling.get(b) {
                let kernel = match &spec.lpf {
                    Some(l) if l.trainable => {
                        let logits = p(format!("{}.lpf_logits", pool_name(b)));
                        Some(tape.softmax_rows(logits, l.rows * l.cols)?)
                    }
                    Some(_) => Some(tape.constant(self.buffers[&format!("{}.lpf_kernel", pool_name(b))].clone())),
                    None => None,
                };
                h = pooling_on_tape(&mut tape, h, spec, kernel)?;
            }
        }
        let pooled = global_pool_on_tape(&mut tape, h)?;
        let logits = tape.linear(pooled, p("head.weight".into()), p("head.bias".into()))?;
        let output = tape.sigmoid(logits);
        let params = handles.into_iter().map(|(k, v)| (String::from(k), v)).collect();
        Ok(ForwardPass { tape, output, params, bn_stats })
    }

    /// Per-class sigmoid scores `[N, num_classes]`. Does not touch running
    /// statistics, so repeated calls are pure.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let pass = self.record(x, mode, false)?;
        Ok(pass.tape.value(pass.output).clone())
    }

    /// Eval-mode scores for a list of `[1, T, F]` inputs, in batches.
    pub fn predict(&self, inputs: &[Tensor], batch_size: usize) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch_size.max(1)) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let scores = self.forward(&Tensor::stack(&refs)?, Mode::Eval)?;
            out.extend(scores.data().chunks(self.config.num_classes).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchNormStats)]) {
        for (bn, s) in stats {
            let unbias = if s.count > 1 { s.count as f32 / (s.count - 1) as f32 } else { 1.0 };
            if let Some(rm) = self.buffers.get_mut(&format!("{bn}.running_mean")) {
                for (r, &m) in rm.data_mut().iter_mut().zip(&s.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
            }
            if let Some(rv) = self.buffers.get_mut(&format!("{bn}.running_var")) {
                for (r, &v) in rv.data_mut().iter_mut().zip(&s.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
                }
            }
        }
    }

    pub fn to_checkpoint(&self, epoch: usize, optimizer: Option<AdamState>, history: Vec<EpochRecord>) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
            optimizer,
            epoch,
            history,
        }
    }

    /// Rebuilds a network from a checkpoint, checking every tensor against
    /// the shapes its config implies.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let skeleton = Network::build(ckpt.config.clone(), 0)?;
        for (want, got, what) in [(&skeleton.params, &ckpt.params, "parameter"), (&skeleton.buffers, &ckpt.buffers, "buffer")] {
            if want.len() != got.len() {
                return Err(Error::Format(format!("checkpoint has {} {what}s, config implies {}", got.len(), want.len())));
            }
            for (name, t) in want {
                match got.get(name) {
                    Some(g) if g.shape() == t.shape() => {}
                    Some(g) => return Err(dim_err("from_checkpoint", format!("{name}: {:?} vs {:?}", g.shape(), t.shape()))),
                    None => return Err(Error::Format(format!("checkpoint lacks {what} {name}"))),
                }
            }
        }
        Ok(Network { config: ckpt.config.clone(), params: ckpt.params.clone(), buffers: ckpt.buffers.clone() })
    }
}

/// Mean over frequency (last axis), then max over time: `[N,C,T,F] -> [N,C]`.
pub fn global_pool_on_tape(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.value(x).dims4()?;
    let spectral = tape.mean_axis(x, 3)?;
    tape.max_axis(spectral, 2)
}

pub fn global_pool(x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = global_pool_on_tape(&mut tape, v)?;
    Ok(tape.value(y).clone())
}

/// Clip-level scores: per-class mean over the clip's patches.
pub fn clip_scores(patch_scores: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = patch_scores.first().ok_or_else(|| Error::Argument("clip has no patches".into()))?;
    let mut acc = vec![0.0f64; first.len()];
    for s in patch_scores {
        if s.len() != acc.len() {
            return Err(dim_err("clip_scores", format!("{} vs {} classes", s.len(), acc.len())));
        }
        for (a, &v) in acc.iter_mut().zip(s) {
            *a += v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / patch_scores.len() as f64) as f32).collect())
}

/// Everything needed to resume or evaluate a trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: TensorMap,
    pub buffers: TensorMap,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::Sampler;

    #[test]
    fn vgg_parameter_counts() {
        let n41 = Network::build(ModelConfig::vgg41(200), 0).unwrap().trainable_count();
        let n42 = Network::build(ModelConfig::vgg42(200), 0).unwrap().trainable_count();
        assert!((n41 as f64 / 1.2e6 - 1.0).abs() < 0.05, "{n41}");
        assert!((n42 as f64 / 4.9e6 - 1.0).abs() < 0.05, "{n42}");
    }

    #[test]
    fn tlpf_adds_per_channel_kernels() {
        let base = Network::build(ModelConfig::vgg41(200), 0).unwrap().trainable_count();
        let spec = PoolingSpec {
            dense_k: 2,
            lpf: Some(LpfSpec { rows: 5, cols: 5, trainable: true, shared: false }),
            sampler: Sampler::Naive,
            stride: (2, 2),
        };
        let tlpf = Network::build(ModelConfig::vgg41(200).with_pooling(spec), 0).unwrap().trainable_count();
        assert_eq!(tlpf - base, (32 + 64 + 128) * 25);
    }

    #[test]
    fn config_errors_are_listed() {
        let mut c = ModelConfig::micro(0);
        c.pooling.clear();
        match c.validate().unwrap_err() {
            Error::Config(v) => assert_eq!(v.len(), 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn global_pool_examples() {
        let x = Tensor::full(&[1, 2, 4, 3], 1.5);
        assert_eq!(global_pool(&x).unwrap().data(), &[1.5, 1.5]);
        let ramp = Tensor::from_fn(&[1, 1, 5, 3], |i| (i / 3) as f32);
        assert_eq!(global_pool(&ramp).unwrap().data(), &[4.0]);
    }

    #[test]
    fn clip_score_mean() {
        assert_eq!(clip_scores(&[vec![0.2], vec![0.6]]).unwrap()[0], 0.4);
        assert_eq!(clip_scores(&[vec![0.3, 0.7]]).unwrap(), vec![0.3, 0.7]);
        assert!(clip_scores(&[]).is_err());
    }
}
