//! Max pooling windows and strided gathers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Padding, Tensor};

/// Unit-stride `k x k` max-pool with "same" geometry.
///
/// Returns the pooled tensor and, per output element, the in-plane index of
/// the winning input element. Out-of-range window cells never win; among
/// equal maxima the first in row-major order wins.
pub fn dense_max_pool(x: &Tensor, k: usize) -> Result<(Tensor, Vec<u32>)> {
    if k == 0 {
        return Err(Error::Argument("max-pool size must be at least 1".into()));
    }
    let (n, c, h, w) = x.dims4()?;
    let gh = Padding::Same.resolve(h, k, 1)?;
    let gw = Padding::Same.resolve(w, k, 1)?;
    let planes = n * c;
    let mut out = vec![0.0f32; x.len()];
    let mut arg = vec![0u32; x.len()];
    // Horizontal pass keeps the leftmost max; the vertical pass keeps the
    // topmost row, which together gives the first row-major maximum.
    let mut row_val = vec![0.0f32; h * w];
    let mut row_arg = vec![0u32; h * w];
    for p in 0..planes {
        let xin = &x.data()[p * h * w..][..h * w];
        for y in 0..h {
            for ox in 0..w {
                let lo = ox.saturating_sub(gw.pad_before);
                let hi = (ox + k - gw.pad_before).min(w);
                let mut best = lo;
                for ix in lo + 1..hi {
                    if xin[y * w + ix] > xin[y * w + best] {
                        best = ix;
                    }
                }
                row_val[y * w + ox] = xin[y * w + best];
                row_arg[y * w + ox] = (y * w + best) as u32;
            }
        }
        let o = &mut out[p * h * w..][..h * w];
        let a = &mut arg[p * h * w..][..h * w];
        for oy in 0..h {
            let lo = oy.saturating_sub(gh.pad_before);
            let hi = (oy + k - gh.pad_before).min(h);
            for ox in 0..w {
                let mut best = lo;
                for iy in lo + 1..hi {
                    if row_val[iy * w + ox] > row_val[best * w + ox] {
                        best = iy;
                    }
                }
                o[oy * w + ox] = row_val[best * w + ox];
                a[oy * w + ox] = row_arg[best * w + ox];
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, arg))
}

pub fn dense_max_pool_backward(shape: &[usize], arg: &[u32], grad_out: &Tensor) -> Tensor {
    let hw = shape[2] * shape[3];
    let mut gx = Tensor::zeros(shape);
    let gxd = gx.data_mut();
    for (i, (&a, &g)) in arg.iter().zip(grad_out.data()).enumerate() {
        let plane = i / hw;
        gxd[plane * hw + a as usize] += g;
    }
    gx
}

/// Output extent of a strided gather: `ceil(len / stride)`.
pub fn gathered_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// `out[n, c, oy, ox] = x[n, c, (i + oy*sh) mod H, (j + ox*sw) mod W]` with
/// one `(i, j)` offset per batch element.
///
/// With offset `(0, 0)` this is naive subsampling. Non-zero offsets select a
/// polyphase component; rows or columns that run past a ragged tail wrap
/// around circularly so every batch element has the same output extent.
pub fn gather_strided(x: &Tensor, stride: (usize, usize), offsets: &[(usize, usize)]) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    if offsets.len() != n {
        return Err(dim_err("gather_strided", format!("{} offsets for batch of {n}", offsets.len())));
    }
    let (oh, ow) = (gathered_len(h, stride.0), gathered_len(w, stride.1));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for (ni, &(i, j)) in offsets.iter().enumerate() {
        if i >= stride.0 || j >= stride.1 {
            return Err(Error::Argument(format!("offset ({i},{j}) outside stride {stride:?}")));
        }
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * h * w..][..h * w];
            for oy in 0..oh {
                let iy = (i + oy * stride.0) % h;
                for ox in 0..ow {
                    out.push(plane[iy * w + (j + ox * stride.1) % w]);
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn gather_strided_backward(
    shape: &[usize],
    stride: (usize, usize),
    offsets: &[(usize, usize)],
    grad_out: &Tensor,
) -> Tensor {
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let (oh, ow) = (gathered_len(h, stride.0), gathered_len(w, stride.1));
    let mut gx = Tensor::zeros(shape);
    let g = grad_out.data();
    let gxd = gx.data_mut();
    let mut k = 0;
    for (ni, &(i, j)) in offsets.iter().enumerate() {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..oh {
                let iy = (i + oy * stride.0) % h;
                for ox in 0..ow {
                    gxd[base + iy * w + (j + ox * stride.1) % w] += g[k];
                    k += 1;
                }
            }
        }
    }
    gx
}
