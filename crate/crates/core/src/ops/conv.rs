//! Direct 2D convolution (cross-correlation) over NCHW tensors.
//!
//! The inner loops are row-wise `axpy`/`dot` calls over contiguous output
//! rows so the unit-stride case vectorizes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::tensor::{AxisGeometry, Padding, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub h: AxisGeometry,
    pub w: AxisGeometry,
    pub stride: (usize, usize),
    pub kernel: (usize, usize),
    pub in_hw: (usize, usize),
}

impl Conv2dGeometry {
    pub fn new(
        in_hw: (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        Ok(Conv2dGeometry {
            h: padding.resolve(in_hw.0, kernel.0, stride.0)?,
            w: padding.resolve(in_hw.1, kernel.1, stride.1)?,
            stride,
            kernel,
            in_hw,
        })
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.h.out, self.w.out)
    }

    /// Input row read by output row `oy` through kernel row `ki`, if inside.
    #[inline]
    fn in_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy * self.stride.0 + ki).checked_sub(self.h.pad_before)?;
        (iy < self.in_hw.0).then_some(iy)
    }

    /// Output columns `[lo, hi)` whose tap `kj` lands inside the input.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let (s, pb, width) = (self.stride.1, self.w.pad_before, self.in_hw.1);
        let lo = if pb > kj { (pb - kj).div_ceil(s) } else { 0 };
        if width - 1 + pb < kj {
            return (0, 0);
        }
        let hi = ((width - 1 + pb - kj) / s + 1).min(self.w.out);
        (lo.min(hi), hi)
    }
}

/// `dst[ox] += w * src[ox * stride + offset]` for `ox` in `[lo, hi)`;
/// `offset` may be negative but every touched index is in range.
#[inline]
fn axpy(dst: &mut [f32], src: &[f32], w: f32, lo: usize, hi: usize, stride: usize, kj: usize, pb: usize) {
    if lo >= hi {
        return;
    }
    let start = lo * stride + kj - pb;
    if stride == 1 {
        for (d, s) in dst[lo..hi].iter_mut().zip(&src[start..start + (hi - lo)]) {
            *d += w * s;
        }
    } else {
        for (d, s) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(stride)) {
            *d += w * s;
        }
    }
}

/// Transpose of [`axpy`]: `dst[ox * stride + offset] += w * src[ox]`.
#[inline]
fn axpy_scatter(dst: &mut [f32], src: &[f32], w: f32, lo: usize, hi: usize, stride: usize, kj: usize, pb: usize) {
    if lo >= hi {
        return;
    }
    let start = lo * stride + kj - pb;
    if stride == 1 {
        for (d, s) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
            *d += w * s;
        }
    } else {
        for (d, s) in dst[start..].iter_mut().step_by(stride).zip(&src[lo..hi]) {
            *d += w * s;
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32], lo: usize, hi: usize, stride: usize, kj: usize, pb: usize) -> f32 {
    if lo >= hi {
        return 0.0;
    }
    let start = lo * stride + kj - pb;
    if stride == 1 {
        dot_lanes(&a[lo..hi], &b[start..start + (hi - lo)])
    } else {
        a[lo..hi].iter().zip(b[start..].iter().step_by(stride)).map(|(x, y)| x * y).sum()
    }
}

/// Dot product with eight independent partial sums, combined in a fixed
/// order.
#[inline]
fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `dst[x] += sum_t k[t] * src[x + t - off]` with `src` zero outside its
/// bounds.
#[inline]
fn correlate3(dst: &mut [f32], src: &[f32], k: [f32; 3], off: usize) {
    let at = |x: usize, t: usize| (x + t).checked_sub(off).and_then(|i| src.get(i)).copied().unwrap_or(0.0);
    let lo = off.min(dst.len());
    let hi = (src.len() + off).saturating_sub(2).clamp(lo, dst.len());
    for x in (0..lo).chain(hi..dst.len()) {
        dst[x] += k[0] * at(x, 0) + k[1] * at(x, 1) + k[2] * at(x, 2);
    }
    if lo < hi {
        let n = hi - lo;
        let base = lo - off;
        let (s0, s1, s2) = (&src[base..base + n], &src[base + 1..base + 1 + n], &src[base + 2..base + 2 + n]);
        for (i, d) in dst[lo..hi].iter_mut().enumerate() {
            *d += k[0] * s0[i] + k[1] * s1[i] + k[2] * s2[i];
        }
    }
}

fn check_conv(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (f, wc, kh, kw) = weight
        .dims4()
        .map_err(|_| dim_err("conv2d", format!("weight must be [F,C,kh,kw], got {:?}", weight.shape())))?;
    if wc != c {
        return Err(dim_err(
            "conv2d",
            format!("channel axis: input has {c}, weight expects {wc}"),
        ));
    }
    Ok((n, c, h, w, f, kh, kw))
}

/// Cross-correlation of `input [N,C,H,W]` with `weight [F,C,kh,kw]` plus an
/// optional per-filter bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let (n, c, h, w, f, kh, kw) = check_conv(input, weight)?;
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(dim_err("conv2d", format!("bias must be [{f}], got {:?}", b.shape())));
        }
    }
    let g = Conv2dGeometry::new((h, w), (kh, kw), stride, padding)?;
    let (oh, ow) = g.out_hw();
    let mut out = vec![0.0f32; n * f * oh * ow];
    let x = input.data();
    let wt = weight.data();
    let cols: Vec<(usize, usize)> = (0..kw).map(|kj| g.col_range(kj)).collect();
    let fused = kw == 3 && stride.1 == 1 && g.w.pad_before <= 2;
    for ni in 0..n {
        for fi in 0..f {
            let plane = &mut out[(ni * f + fi) * oh * ow..][..oh * ow];
            if let Some(b) = bias {
                plane.fill(b.data()[fi]);
            }
            for ci in 0..c {
                let xin = &x[(ni * c + ci) * h * w..][..h * w];
                let wk = &wt[(fi * c + ci) * kh * kw..][..kh * kw];
                for oy in 0..oh {
                    let orow = &mut plane[oy * ow..][..ow];
                    for ki in 0..kh {
                        let Some(iy) = g.in_row(oy, ki) else { continue };
                        let irow = &xin[iy * w..][..w];
                        if fused {
                            let k = [wk[ki * 3], wk[ki * 3 + 1], wk[ki * 3 + 2]];
                            correlate3(orow, irow, k, g.w.pad_before);
                            continue;
                        }
                        for (kj, &(lo, hi)) in cols.iter().enumerate() {
                            axpy(orow, irow, wk[ki * kw + kj], lo, hi, stride.1, kj, g.w.pad_before);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w, f, kh, kw) = check_conv(input, weight)?;
    let g = Conv2dGeometry::new((h, w), (kh, kw), stride, padding)?;
    let (oh, ow) = g.out_hw();
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let cols: Vec<(usize, usize)> = (0..kw).map(|kj| g.col_range(kj)).collect();
    let fused = kw == 3 && stride.1 == 1 && g.w.pad_before <= 2;

    let mut gx = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let gin = &mut gx[(ni * c + ci) * h * w..][..h * w];
            for fi in 0..f {
                let gplane = &go[(ni * f + fi) * oh * ow..][..oh * ow];
                let wk = &wt[(fi * c + ci) * kh * kw..][..kh * kw];
                for oy in 0..oh {
                    let grow = &gplane[oy * ow..][..ow];
                    for ki in 0..kh {
                        let Some(iy) = g.in_row(oy, ki) else { continue };
                        let irow = &mut gin[iy * w..][..w];
                        if fused {
                            let k = [wk[ki * 3 + 2], wk[ki * 3 + 1], wk[ki * 3]];
                            correlate3(irow, grow, k, 2 - g.w.pad_before);
                            continue;
                        }
                        for (kj, &(lo, hi)) in cols.iter().enumerate() {
                            axpy_scatter(irow, grow, wk[ki * kw + kj], lo, hi, stride.1, kj, g.w.pad_before);
                        }
                    }
                }
            }
        }
    }

    let mut gw = vec![0.0f64; wt.len()];
    let mut gb = vec![0.0f64; f];
    for ni in 0..n {
        for fi in 0..f {
            let gplane = &go[(ni * f + fi) * oh * ow..][..oh * ow];
            gb[fi] += gplane.iter().map(|&v| v as f64).sum::<f64>();
            for ci in 0..c {
                let xin = &x[(ni * c + ci) * h * w..][..h * w];
                let acc = &mut gw[(fi * c + ci) * kh * kw..][..kh * kw];
                for oy in 0..oh {
                    let grow = &gplane[oy * ow..][..ow];
                    for ki in 0..kh {
                        let Some(iy) = g.in_row(oy, ki) else { continue };
                        let irow = &xin[iy * w..][..w];
                        for (kj, &(lo, hi)) in cols.iter().enumerate() {
                            acc[ki * kw + kj] += dot(grow, irow, lo, hi, stride.1, kj, g.w.pad_before) as f64;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![f], gb.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// Kernel layout for a depthwise convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthwiseKernel {
    /// `[C, kh, kw]`: one kernel per channel.
    PerChannel,
    /// `[kh, kw]`: the same kernel for every channel.
    Shared,
}

fn check_depthwise(input: &Tensor, kernel: &Tensor) -> Result<(DepthwiseKernel, usize, usize)> {
    let (_, c, _, _) = input.dims4()?;
    match *kernel.shape() {
        [kc, kh, kw] if kc == c => Ok((DepthwiseKernel::PerChannel, kh, kw)),
        [kh, kw] => Ok((DepthwiseKernel::Shared, kh, kw)),
        _ => Err(dim_err(
            "depthwise_conv2d",
            format!("kernel must be [{c},kh,kw] or [kh,kw], got {:?}", kernel.shape()),
        )),
    }
}

/// Convolves every channel independently with its own (or a shared) kernel.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (layout, kh, kw) = check_depthwise(input, kernel)?;
    let g = Conv2dGeometry::new((h, w), (kh, kw), stride, padding)?;
    let (oh, ow) = g.out_hw();
    let cols: Vec<(usize, usize)> = (0..kw).map(|kj| g.col_range(kj)).collect();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            let xin = &input.data()[(ni * c + ci) * h * w..][..h * w];
            let wk = match layout {
                DepthwiseKernel::PerChannel => &kernel.data()[ci * kh * kw..][..kh * kw],
                DepthwiseKernel::Shared => kernel.data(),
            };
            let plane = &mut out[(ni * c + ci) * oh * ow..][..oh * ow];
            for oy in 0..oh {
                let orow = &mut plane[oy * ow..][..ow];
                for ki in 0..kh {
                    let Some(iy) = g.in_row(oy, ki) else { continue };
                    let irow = &xin[iy * w..][..w];
                    for (kj, &(lo, hi)) in cols.iter().enumerate() {
                        axpy(orow, irow, wk[ki * kw + kj], lo, hi, stride.1, kj, g.w.pad_before);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Gradients of [`depthwise_conv2d`] with respect to input and kernel.
pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = input.dims4()?;
    let (layout, kh, kw) = check_depthwise(input, kernel)?;
    let g = Conv2dGeometry::new((h, w), (kh, kw), stride, padding)?;
    let (oh, ow) = g.out_hw();
    let cols: Vec<(usize, usize)> = (0..kw).map(|kj| g.col_range(kj)).collect();
    let mut gx = vec![0.0f32; input.len()];
    let mut gk = vec![0.0f64; kernel.len()];
    for ni in 0..n {
        for ci in 0..c {
            let koff = match layout {
                DepthwiseKernel::PerChannel => ci * kh * kw,
                DepthwiseKernel::Shared => 0,
            };
            let wk = &kernel.data()[koff..][..kh * kw];
            let xin = &input.data()[(ni * c + ci) * h * w..][..h * w];
            let gin = &mut gx[(ni * c + ci) * h * w..][..h * w];
            let gplane = &grad_out.data()[(ni * c + ci) * oh * ow..][..oh * ow];
            for oy in 0..oh {
                let grow = &gplane[oy * ow..][..ow];
                for ki in 0..kh {
                    let Some(iy) = g.in_row(oy, ki) else { continue };
                    for (kj, &(lo, hi)) in cols.iter().enumerate() {
                        axpy_scatter(&mut gin[iy * w..][..w], grow, wk[ki * kw + kj], lo, hi, stride.1, kj, g.w.pad_before);
                        gk[koff + ki * kw + kj] +=
                            dot(grow, &xin[iy * w..][..w], lo, hi, stride.1, kj, g.w.pad_before) as f64;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk.into_iter().map(|v| v as f32).collect())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    /// Nested-loop reference with explicit zero padding.
    fn reference(x: &Tensor, wt: &Tensor, stride: (usize, usize), padding: Padding) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let (f, _, kh, kw) = wt.dims4().unwrap();
        let gh = padding.resolve(h, kh, stride.0).unwrap();
        let gw = padding.resolve(w, kw, stride.1).unwrap();
        let mut out = Tensor::zeros(&[n, f, gh.out, gw.out]);
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..gh.out {
                    for ox in 0..gw.out {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride.0 + ki) as isize - gh.pad_before as isize;
                                    let ix = (ox * stride.1 + kj) as isize - gw.pad_before as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.at4(ni, ci, iy as usize, ix as usize) as f64
                                        * wt.at4(fi, ci, ki, kj) as f64;
                                }
                            }
                        }
                        out.data_mut()[((ni * f + fi) * gh.out + oy) * gw.out + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_valid_gives_nine() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, (1, 1), Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_same_padding() {
        let mut rng = seeded(3);
        let x = Tensor::from_fn(&[2, 1, 5, 7], |_| rng.random_range(-1.0..1.0));
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d(&x, &k, None, (1, 1), Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = seeded(11);
        for _ in 0..50 {
            let n = rng.random_range(1..3);
            let c = rng.random_range(1..4);
            let f = rng.random_range(1..4);
            let kh = rng.random_range(1..5);
            let kw = rng.random_range(1..5);
            let h = rng.random_range(kh..12);
            let w = rng.random_range(kw..12);
            let stride = (rng.random_range(1..4), rng.random_range(1..4));
            let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
            let x = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-1.0..1.0));
            let k = Tensor::from_fn(&[f, c, kh, kw], |_| rng.random_range(-1.0..1.0));
            let got = conv2d(&x, &k, None, stride, padding).unwrap();
            let want = reference(&x, &k, stride, padding);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-5, "{:?}", (n, c, f, kh, kw, h, w, stride, padding));
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, None, (1, 1), Padding::Same).unwrap_err();
        assert!(matches!(err, crate::Error::Dimension { .. }));
    }

    #[test]
    fn depthwise_identity_and_scaling() {
        let mut rng = seeded(5);
        let x = Tensor::from_fn(&[1, 2, 4, 5], |_| rng.random_range(-1.0..1.0));
        let shared = Tensor::full(&[1, 1], 1.0);
        assert_eq!(depthwise_conv2d(&x, &shared, (1, 1), Padding::Same).unwrap(), x);

        let per = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let y = depthwise_conv2d(&x, &per, (1, 1), Padding::Same).unwrap();
        assert_eq!(&y.data()[..20], &x.data()[..20]);
        for (a, b) in y.data()[20..].iter().zip(&x.data()[20..]) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn depthwise_stride_picks_even_grid() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let k = Tensor::full(&[1, 1], 1.0);
        let y = depthwise_conv2d(&x, &k, (2, 2), Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }
}
