//! Shift-aware pooling layers.
//!
//! A max-pool of size `k` and stride `s` factors into a densely evaluated
//! (unit-stride) max-pool followed by subsampling. This module provides the
//! pieces that replace the plain subsampling step:
//!
//! * low-pass filtering before subsampling, with fixed binomial kernels or
//!   trainable kernels whose weights are a softmax over free logits, fused
//!   with the stride into one depthwise convolution;
//! * adaptive polyphase sampling (APS), which keeps the polyphase component
//!   with the largest `l1` or `l2` norm instead of always the `(0, 0)` grid.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::ops::elementwise::softmax_rows;
use crate::ops::pool::gathered_len;
use crate::tape::{Tape, Var};
use crate::tensor::{Padding, Tensor};

/// Integer binomial coefficients `C(order + 1, k)`: `[1, 1]` convolved with
/// itself `order` times.
pub fn binomial_coefficients(order: usize) -> Vec<u64> {
    let mut mask = vec![1u64, 1];
    for _ in 0..order {
        let mut next = vec![0u64; mask.len() + 1];
        for (i, &v) in mask.iter().enumerate() {
            next[i] += v;
            next[i + 1] += v;
        }
        mask = next;
    }
    mask
}

/// Unit-sum 1D binomial mask of length `order + 2`.
pub fn binomial1d(order: usize) -> Vec<f64> {
    let coeffs = binomial_coefficients(order);
    let total: u64 = coeffs.iter().sum();
    coeffs.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Binomial mask of a given length; length 1 is the identity tap `[1]`.
fn binomial_of_len(len: usize) -> Result<Vec<f64>> {
    match len {
        0 => Err(Error::Argument("kernel extent must be at least 1".into())),
        1 => Ok(vec![1.0]),
        n => Ok(binomial1d(n - 2)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Binomial,
    Trainable,
}

/// Non-negative, unit-sum 2D low-pass mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    weights: Tensor,
    kind: KernelKind,
    raw: Option<Tensor>,
}

impl FilterKernel {
    pub fn rows(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `[rows, cols]` weights.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Pre-softmax logits of a trainable kernel.
    pub fn raw_params(&self) -> Option<&Tensor> {
        self.raw.as_ref()
    }

    /// Builds a fixed kernel from arbitrary weights after checking the
    /// low-pass constraints (non-negative, unit sum within `1e-6`).
    pub fn from_weights(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(dim_err("FilterKernel", format!("weights must be 2D, got {:?}", weights.shape())));
        }
        if weights.data().iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Argument("low-pass weights must be non-negative".into()));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("low-pass weights must sum to 1, got {sum}")));
        }
        Ok(FilterKernel { weights, kind: KernelKind::Binomial, raw: None })
    }
}

/// Separable binomial kernel of shape `rows x cols` (outer product of the 1D
/// binomial masks of those lengths).
pub fn binomial_kernel(rows: usize, cols: usize) -> Result<FilterKernel> {
    let r = binomial_of_len(rows)?;
    let c = binomial_of_len(cols)?;
    let weights = Tensor::from_fn(&[rows, cols], |idx| (r[idx / cols] * c[idx % cols]) as f32);
    Ok(FilterKernel { weights, kind: KernelKind::Binomial, raw: None })
}

/// Square `size x size` binomial kernel, `size >= 2`.
pub fn binomial2d(size: usize) -> Result<FilterKernel> {
    if size < 2 {
        return Err(Error::Argument(format!("binomial kernel size must be at least 2, got {size}")));
    }
    binomial_kernel(size, size)
}

/// Trainable kernel: softmax over all `m * n` logits, reshaped to `m x n`.
pub fn tlpf_materialize(raw: &Tensor) -> Result<FilterKernel> {
    let (m, n) = match *raw.shape() {
        [m, n] if m >= 1 && n >= 1 => (m, n),
        _ => return Err(dim_err("tlpf_materialize", format!("logits must be [m,n], got {:?}", raw.shape()))),
    };
    let weights = Tensor::new(vec![m, n], softmax_rows(raw.data(), m * n))?;
    Ok(FilterKernel { weights, kind: KernelKind::Trainable, raw: Some(raw.clone()) })
}

/// Subsampling grid offset `(i, j)` within a stride cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolyphaseIndex {
    pub i: usize,
    pub j: usize,
}

/// Low-pass filter stage of a pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpfSpec {
    pub rows: usize,
    pub cols: usize,
    /// Softmax-constrained logits when true, fixed binomial weights otherwise.
    pub trainable: bool,
    /// One kernel for all channels instead of one kernel per channel.
    #[serde(default)]
    pub shared: bool,
}

/// Grid selection stage of a pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    /// Always the `(0, 0)` grid.
    Naive,
    /// Component with the largest `l_p` norm, `p` in `{1, 2}`.
    Aps { p: u8 },
}

/// One pooling layer: dense max-pool of size `dense_k`, optional low-pass
/// filter, then subsampling with `stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingSpec {
    pub dense_k: usize,
    #[serde(default)]
    pub lpf: Option<LpfSpec>,
    pub sampler: Sampler,
    pub stride: (usize, usize),
}

impl PoolingSpec {
    /// Conventional `k x k` max-pool with stride `k`.
    pub fn max_pool(k: usize) -> Self {
        PoolingSpec { dense_k: k, lpf: None, sampler: Sampler::Naive, stride: (k, k) }
    }

    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.dense_k == 0 {
            errs.push("dense_k must be at least 1".into());
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            errs.push(format!("stride {:?} must be at least 1 on both axes", self.stride));
        }
        if let Some(l) = self.lpf {
            if l.rows == 0 || l.cols == 0 {
                errs.push(format!("low-pass kernel {}x{} is empty", l.rows, l.cols));
            }
        }
        if let Sampler::Aps { p } = self.sampler {
            if p != 1 && p != 2 {
                errs.push(format!("APS norm must be l1 or l2, got l{p}"));
            }
        }
        let subsampling = !(self.lpf.is_none() && self.sampler == Sampler::Naive);
        if subsampling && self.stride == (1, 1) {
            errs.push("low-pass or adaptive subsampling needs a stride above 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Densely evaluated `k x k` max-pool (unit stride, "same" geometry).
pub fn dense_maxpool(x: &Tensor, k: usize) -> Result<Tensor> {
    Ok(crate::ops::dense_max_pool(x, k)?.0)
}

/// Naive subsampling on the `(0, 0)` grid.
pub fn naive_subsample(x: &Tensor, stride: (usize, usize)) -> Result<Tensor> {
    let n = x.dims4()?.0;
    crate::ops::gather_strided(x, stride, &vec![(0, 0); n])
}

/// Depthwise low-pass filtering fused with stride `s`, "same" zero padding;
/// output is `ceil(H / s_h) x ceil(W / s_w)`.
pub fn lpf_subsample(x: &Tensor, kernel: &FilterKernel, stride: (usize, usize)) -> Result<Tensor> {
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    crate::ops::depthwise_conv2d(x, kernel.weights(), stride, Padding::Same)
}

/// All `s_h * s_w` polyphase components `x[.., i::s_h, j::s_w]`, with ragged
/// tails (component `(i, j)` has `ceil((H - i) / s_h)` rows).
pub fn polyphase_components(x: &Tensor, stride: (usize, usize)) -> Result<BTreeMap<PolyphaseIndex, Tensor>> {
    let (n, c, h, w) = x.dims4()?;
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let mut out = BTreeMap::new();
    for i in 0..stride.0 {
        for j in 0..stride.1 {
            let rows = h.saturating_sub(i).div_ceil(stride.0);
            let cols = w.saturating_sub(j).div_ceil(stride.1);
            let mut data = Vec::with_capacity(n * c * rows * cols);
            for p in 0..n * c {
                for r in 0..rows {
                    for q in 0..cols {
                        data.push(x.data()[p * h * w + (i + r * stride.0) * w + j + q * stride.1]);
                    }
                }
            }
            out.insert(PolyphaseIndex { i, j }, Tensor::new(vec![n, c, rows, cols], data)?);
        }
    }
    Ok(out)
}

/// `l_p` norm criterion used by APS (`l2` is compared squared).
fn component_norm(values: impl Iterator<Item = f32>, p: u8) -> f64 {
    match p {
        1 => values.map(|v| (v as f64).abs()).sum(),
        _ => values.map(|v| (v as f64) * (v as f64)).sum(),
    }
}

/// Picks, per batch element, the polyphase component with the largest
/// `l_p` norm over all channels and bins. Ties keep the first component in
/// row-major `(i, j)` order.
///
/// Components are taken with the same circular wrap as
/// [`ops::gather_strided`](crate::ops::gather_strided), so the norm is the
/// norm of what is emitted; for extents divisible by the stride this equals
/// the plain polyphase component.
pub fn aps_select(x: &Tensor, stride: (usize, usize), p: u8) -> Result<Vec<PolyphaseIndex>> {
    let (n, c, h, w) = x.dims4()?;
    if p != 1 && p != 2 {
        return Err(Error::Argument(format!("APS norm must be l1 or l2, got l{p}")));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let (oh, ow) = (gathered_len(h, stride.0), gathered_len(w, stride.1));
    let mut picks = Vec::with_capacity(n);
    for ni in 0..n {
        let sample = &x.data()[ni * c * h * w..][..c * h * w];
        let mut best: Option<(f64, PolyphaseIndex)> = None;
        for i in 0..stride.0 {
            for j in 0..stride.1 {
                let values = (0..c).flat_map(|ci| {
                    (0..oh).flat_map(move |oy| {
                        (0..ow).map(move |ox| {
                            sample[ci * h * w + ((i + oy * stride.0) % h) * w + (j + ox * stride.1) % w]
                        })
                    })
                });
                let norm = component_norm(values, p);
                if best.is_none_or(|(b, _)| norm > b) {
                    best = Some((norm, PolyphaseIndex { i, j }));
                }
            }
        }
        picks.push(best.expect("stride >= 1 yields a component").1);
    }
    Ok(picks)
}

/// Adaptive polyphase subsampling. Returns the selected component of every
/// batch element and the selection itself.
pub fn aps_subsample(x: &Tensor, stride: (usize, usize), p: u8) -> Result<(Tensor, Vec<PolyphaseIndex>)> {
    let picks = aps_select(x, stride, p)?;
    let offsets: Vec<(usize, usize)> = picks.iter().map(|ix| (ix.i, ix.j)).collect();
    Ok((crate::ops::gather_strided(x, stride, &offsets)?, picks))
}

/// Records a pooling layer on a tape.
///
/// `kernel` carries the low-pass weights (`[m, n]` shared or `[C, m, n]`
/// per channel) when `spec.lpf` is set; for trainable filters it is the
/// softmax output of the logits so gradients reach them.
pub fn pooling_on_tape(tape: &mut Tape, x: Var, spec: &PoolingSpec, kernel: Option<Var>) -> Result<Var> {
    spec.validate().map_err(Error::Config)?;
    let mut y = if spec.dense_k > 1 { tape.max_pool_dense(x, spec.dense_k)? } else { x };
    let n = tape.value(y).dims4()?.0;
    match (spec.lpf, spec.sampler) {
        (None, Sampler::Naive) => {
            if spec.stride != (1, 1) {
                y = tape.gather_strided(y, spec.stride, vec![(0, 0); n])?;
            }
        }
        (Some(_), Sampler::Naive) => {
            let k = kernel.ok_or_else(|| Error::Argument("low-pass layer needs a kernel".into()))?;
            y = tape.depthwise_conv2d(y, k, spec.stride, Padding::Same)?;
        }
        (lpf, Sampler::Aps { p }) => {
            if lpf.is_some() {
                let k = kernel.ok_or_else(|| Error::Argument("low-pass layer needs a kernel".into()))?;
                y = tape.depthwise_conv2d(y, k, (1, 1), Padding::Same)?;
            }
            let picks = aps_select(tape.value(y), spec.stride, p)?;
            y = tape.gather_strided(y, spec.stride, picks.iter().map(|ix| (ix.i, ix.j)).collect())?;
        }
    }
    Ok(y)
}

/// Applies a pooling layer with a fixed, channel-shared kernel.
pub fn pooling_layer(x: &Tensor, spec: &PoolingSpec, kernel: Option<&FilterKernel>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = match (spec.lpf, kernel) {
        (Some(l), Some(k)) => {
            if (k.rows(), k.cols()) != (l.rows, l.cols) {
                return Err(dim_err(
                    "pooling_layer",
                    format!("spec wants a {}x{} kernel, got {}x{}", l.rows, l.cols, k.rows(), k.cols()),
                ));
            }
            Some(tape.constant(k.weights().clone()))
        }
        (Some(l), None) if !l.trainable => Some(tape.constant(binomial_kernel(l.rows, l.cols)?.weights().clone())),
        (Some(l), None) => {
            Some(tape.constant(tlpf_materialize(&Tensor::zeros(&[l.rows, l.cols]))?.weights().clone()))
        }
        (None, _) => None,
    };
    let y = pooling_on_tape(&mut tape, xv, spec, kv)?;
    Ok(tape.value(y).clone())
}
