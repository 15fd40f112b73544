//! Small dense kernels: softmax, matmul, sigmoid, logistic loss.

use alloc::vec;
use alloc::vec::Vec;

/// Softmax over consecutive rows of length `row_len`.
pub fn softmax_rows(x: &[f32], row_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (row, o) in x.chunks(row_len).zip(out.chunks_mut(row_len)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (oi, &v) in o.iter_mut().zip(row) {
            let e = libm::exp((v - max) as f64);
            *oi = e as f32;
            sum += e;
        }
        for oi in o.iter_mut() {
            *oi = (*oi as f64 / sum) as f32;
        }
    }
    out
}

/// Vector-Jacobian product of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &[f32], grad: &[f32], row_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; y.len()];
    for ((yr, gr), o) in y.chunks(row_len).zip(grad.chunks(row_len)).zip(out.chunks_mut(row_len)) {
        let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
        for ((oi, &yi), &gi) in o.iter_mut().zip(yr).zip(gr) {
            *oi = (yi as f64 * (gi as f64 - dot)) as f32;
        }
    }
    out
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::expf(-v))
    } else {
        let e = libm::expf(v);
        e / (1.0 + e)
    }
}

/// `a [m,k] @ b [k,n]`, accumulated in `f64`.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        for p in 0..k {
            let av = a[i * k + p] as f64;
            for (o, &bv) in acc.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv as f64;
            }
        }
        for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = *v as f32;
        }
    }
    out
}

/// `a^T [k,m]^T @ g [m,n]` -> `[k,n]`.
pub fn matmul_at_b(a: &[f32], g: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p] as f64;
            for (o, &gv) in acc[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                *o += av * gv as f64;
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// `g [m,n] @ b^T` where `b` is `[k,n]` -> `[m,k]`.
pub fn matmul_a_bt(g: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * k];
    for i in 0..m {
        for p in 0..k {
            out[i * k + p] = g[i * n..(i + 1) * n]
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum::<f64>() as f32;
        }
    }
    out
}

/// Clamp applied to scores before taking logs in the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against soft targets.
pub fn bce(scores: &[f32], targets: &[f32]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let s = (s as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = t as f64;
            -(t * libm::log(s) + (1.0 - t) * libm::log(1.0 - s))
        })
        .sum::<f64>()
        / n
}

pub fn bce_backward(scores: &[f32], targets: &[f32], upstream: f32) -> Vec<f32> {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let raw = s as f64;
            let s = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if s != raw {
                return 0.0;
            }
            let t = t as f64;
            ((s - t) / (s * (1.0 - s)) / n * upstream as f64) as f32
        })
        .collect()
}
