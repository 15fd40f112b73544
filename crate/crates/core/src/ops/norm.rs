//! Batch normalization over the `(N, H, W)` axes of NCHW tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Per-channel batch statistics captured by a training-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f32>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f32>,
    /// Number of elements per channel.
    pub count: usize,
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(dim_err(
            "batch_norm",
            format!("affine parameters must be [{c}], got {:?}/{:?}", gamma.shape(), beta.shape()),
        ));
    }
    Ok((n, c, h * w))
}

/// Normalizes with the batch's own statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<(Tensor, BatchNormStats)> {
    let (n, c, hw) = check(x, gamma, beta)?;
    let count = n * hw;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ci in 0..c {
        let mut s = 0.0f64;
        for ni in 0..n {
            s += x.data()[(ni * c + ci) * hw..][..hw].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / count as f64;
        let mut ss = 0.0f64;
        for ni in 0..n {
            ss += x.data()[(ni * c + ci) * hw..][..hw]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ci] = m as f32;
        var[ci] = (ss / count as f64) as f32;
    }
    let y = normalize(x, gamma, beta, &mean, &var, eps, n, c, hw)?;
    Ok((y, BatchNormStats { mean, var, count }))
}

/// Normalizes with externally supplied (running) statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (n, c, hw) = check(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(dim_err("batch_norm", format!("running statistics must have {c} entries")));
    }
    normalize(x, gamma, beta, mean, var, eps, n, c, hw)
}

#[allow(clippy::too_many_arguments)]
fn normalize(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f32],
    var: &[f32],
    eps: f32,
    n: usize,
    c: usize,
    hw: usize,
) -> Result<Tensor> {
    let mut out = vec![0.0f32; x.len()];
    for ci in 0..c {
        let inv = 1.0 / libm::sqrtf(var[ci] + eps);
        let scale = gamma.data()[ci] * inv;
        let shift = beta.data()[ci] - mean[ci] * scale;
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for (o, &v) in out[off..off + hw].iter_mut().zip(&x.data()[off..off + hw]) {
                *o = v * scale + shift;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Gradients of the training-mode forward with respect to `x`, `gamma`, `beta`.
pub fn batch_norm_train_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &BatchNormStats,
    eps: f32,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let m = stats.count as f64;
    let mut gx = vec![0.0f32; x.len()];
    let mut gg = vec![0.0f32; c];
    let mut gb = vec![0.0f32; c];
    for ci in 0..c {
        let mean = stats.mean[ci] as f64;
        let inv = 1.0 / libm::sqrt((stats.var[ci] + eps) as f64);
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for (&dy, &v) in grad_out.data()[off..off + hw].iter().zip(&x.data()[off..off + hw]) {
                sum_dy += dy as f64;
                sum_dy_xhat += dy as f64 * (v as f64 - mean) * inv;
            }
        }
        gb[ci] = sum_dy as f32;
        gg[ci] = sum_dy_xhat as f32;
        let k = gamma.data()[ci] as f64 * inv / m;
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for ((g, &dy), &v) in gx[off..off + hw]
                .iter_mut()
                .zip(&grad_out.data()[off..off + hw])
                .zip(&x.data()[off..off + hw])
            {
                let xhat = (v as f64 - mean) * inv;
                *g = (k * (m * dy as f64 - sum_dy - xhat * sum_dy_xhat)) as f32;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(vec![c], gg)?,
        Tensor::new(vec![c], gb)?,
    ))
}

/// Gradients of the eval-mode (fixed statistics) forward.
pub fn batch_norm_eval_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f32],
    var: &[f32],
    eps: f32,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut gx = vec![0.0f32; x.len()];
    let mut gg = vec![0.0f64; c];
    let mut gb = vec![0.0f64; c];
    for ci in 0..c {
        let inv = 1.0 / libm::sqrtf(var[ci] + eps);
        let scale = gamma.data()[ci] * inv;
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for i in off..off + hw {
                let dy = grad_out.data()[i];
                gx[i] = dy * scale;
                gb[ci] += dy as f64;
                gg[ci] += dy as f64 * ((x.data()[i] - mean[ci]) * inv) as f64;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(vec![c], gg.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![c], gb.into_iter().map(|v| v as f32).collect())?,
    ))
}
