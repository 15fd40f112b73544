//! Brute-force reference checks runnable from the command line: direct
//! convolution loops, exhaustive precision-recall integration, polyphase
//! enumeration and finite differences.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use shiftpool_core::metrics::average_precision;
use shiftpool_core::pooling::{
    aps_subsample, binomial1d, binomial2d, binomial_coefficients, polyphase_components, tlpf_materialize,
};
use shiftpool_core::rng::{derive, ChaCha8Rng};
use shiftpool_core::{Padding, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    Filter,
    Conv,
    Ap,
    Aps,
    Fd,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["all", "filter", "conv", "ap", "aps", "fd"];

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "all" => Suite::All,
            "filter" => Suite::Filter,
            "conv" => Suite::Conv,
            "ap" => Suite::Ap,
            "aps" => Suite::Aps,
            "fd" => Suite::Fd,
            _ => return Err(format!("unknown suite `{s}` (expected one of {})", Suite::NAMES.join(", "))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Suite::All => "all",
            Suite::Filter => "filter",
            Suite::Conv => "conv",
            Suite::Ap => "ap",
            Suite::Aps => "aps",
            Suite::Fd => "fd",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Options {
    pub seed: u64,
    /// Negative control: scales every binomial kernel by `1 + 1e-3` before
    /// the normalization checks.
    pub perturb_normalization: bool,
}

#[derive(Clone, Debug)]
pub struct Case {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn case(suite: Suite, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Case {
    Case { suite, name: name.into(), passed, detail: detail.into() }
}

pub fn run(suite: Suite, opts: Options) -> Vec<Case> {
    let mut out = Vec::new();
    if suite.includes(Suite::Filter) {
        out.extend(filter_suite(opts));
    }
    if suite.includes(Suite::Conv) {
        out.extend(conv_suite(opts));
    }
    if suite.includes(Suite::Ap) {
        out.extend(ap_suite(opts));
    }
    if suite.includes(Suite::Aps) {
        out.extend(aps_suite(opts));
    }
    if suite.includes(Suite::Fd) {
        out.extend(fd_suite(opts));
    }
    out
}

fn filter_suite(opts: Options) -> Vec<Case> {
    let mut out = Vec::new();
    for order in 0..=6 {
        let pascal = pascal_row(order + 1);
        let got = binomial_coefficients(order);
        out.push(case(Suite::Filter, format!("pascal-row-{order}"), got == pascal, format!("{got:?}")));
    }
    let scale = if opts.perturb_normalization { 1.0 + 1e-3 } else { 1.0 };
    for size in 2..=7 {
        let k = binomial2d(size).expect("size >= 2");
        let w: Vec<f64> = k.weights().data().iter().map(|&v| f64::from(v) * scale).collect();
        let sum: f64 = w.iter().sum();
        let one_d = binomial1d(size - 2);
        let outer_err = (0..size * size)
            .map(|i| (w[i] - one_d[i / size] * one_d[i % size]).abs())
            .fold(0.0, f64::max);
        out.push(case(Suite::Filter, format!("binomial-{size}x{size}-unit-sum"), (sum - 1.0).abs() < 1e-6, format!("sum {sum:.9}")));
        out.push(case(Suite::Filter, format!("binomial-{size}x{size}-outer"), outer_err < 1e-6, format!("max err {outer_err:.3e}")));
    }
    let mut rng = derive(opts.seed, "oracle/tlpf");
    let mut worst = 0.0f64;
    let mut positive = true;
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let raw = random_tensor(&mut rng, &[m, n], 4.0);
        let w = tlpf_materialize(&raw).expect("valid logits");
        let sum: f64 = w.weights().data().iter().map(|&v| f64::from(v) * scale).sum();
        worst = worst.max((sum - 1.0).abs());
        positive &= w.weights().data().iter().all(|&v| v > 0.0);
    }
    out.push(case(Suite::Filter, "tlpf-softmax-constraint", positive && worst < 1e-6, format!("max |sum-1| {worst:.3e}")));
    out
}

fn pascal_row(order: usize) -> Vec<u64> {
    let mut row = vec![1u64];
    for _ in 0..order {
        let mut next = vec![1u64; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| (rng.random::<f32>() * 2.0 - 1.0) * scale)
}

/// Direct convolution with explicit padding, accumulated in f64.
pub fn reference_conv(x: &Tensor, w: &Tensor, stride: (usize, usize), padding: Padding) -> Tensor {
    let (n, c, h, wd) = x.dims4().expect("rank 4");
    let (f, _, kh, kw) = w.dims4().expect("rank 4");
    let gh = padding.resolve(h, kh, stride.0).expect("kernel fits");
    let gw = padding.resolve(wd, kw, stride.1).expect("kernel fits");
    let mut out = vec![0.0f32; n * f * gh.out * gw.out];
    for b in 0..n {
        for o in 0..f {
            for i in 0..gh.out {
                for j in 0..gw.out {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride.0 + u) as isize - gh.pad_before as isize;
                                let s = (j * stride.1 + v) as isize - gw.pad_before as isize;
                                if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < wd {
                                    acc += f64::from(x.at4(b, ch, r as usize, s as usize)) * f64::from(w.at4(o, ch, u, v));
                                }
                            }
                        }
                    }
                    out[((b * f + o) * gh.out + i) * gw.out + j] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, f, gh.out, gw.out], out).expect("shape matches")
}

fn conv_suite(opts: Options) -> Vec<Case> {
    let mut rng = derive(opts.seed, "oracle/conv");
    let mut out = Vec::new();
    for trial in 0..30 {
        let padding = if rng.random::<bool>() { Padding::Same } else { Padding::Valid };
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(kh..=8), rng.random_range(kw..=8));
        let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
        let (n, c, f) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
        let x = random_tensor(&mut rng, &[n, c, h, w], 1.0);
        let k = random_tensor(&mut rng, &[f, c, kh, kw], 1.0);
        let got = shiftpool_core::ops::conv2d(&x, &k, None, stride, padding).expect("valid geometry");
        let want = reference_conv(&x, &k, stride, padding);
        let err = if got.shape() == want.shape() { got.max_abs_diff(&want) } else { f32::INFINITY };
        out.push(case(Suite::Conv, format!("conv-{trial}"), err <= 1e-5, format!("{:?} max err {err:.3e}", got.shape())));
    }
    out
}

/// Area under the precision-recall step curve, evaluated at every distinct
/// score threshold. Scores must be distinct.
pub fn brute_force_ap(scores: &[f32], targets: &[bool]) -> f64 {
    let positives = targets.iter().filter(|&&t| t).count() as f64;
    let mut thresholds: Vec<f32> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for tau in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= tau).collect();
        let tp = selected.iter().filter(|&&i| targets[i]).count() as f64;
        let precision = tp / selected.len() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

fn ap_suite(opts: Options) -> Vec<Case> {
    let mut rng = derive(opts.seed, "oracle/ap");
    let mut worst = 0.0f64;
    let mut count = 0;
    while count < 200 {
        let m = rng.random_range(1..=20);
        let mut scores: Vec<f32> = (0..m).map(|_| rng.random::<f32>()).collect();
        scores.sort_by(f32::total_cmp);
        scores.dedup();
        let targets: Vec<bool> = (0..scores.len()).map(|_| rng.random::<bool>()).collect();
        if !targets.contains(&true) {
            continue;
        }
        let got = average_precision(&scores, &targets).expect("has positives");
        worst = worst.max((got - brute_force_ap(&scores, &targets)).abs());
        count += 1;
    }
    let hand = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap_or(f64::NAN);
    vec![
        case(Suite::Ap, "ap-vs-pr-integration", worst < 1e-9, format!("200 sets, max err {worst:.3e}")),
        case(Suite::Ap, "ap-hand-case", (hand - 5.0 / 6.0).abs() < 1e-12, format!("{hand:.6}")),
    ]
}

fn roll(x: &Tensor, dh: usize, dw: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[((b * c + ch) * h + (i + dh) % h) * w + (j + dw) % w] = x.at4(b, ch, i, j);
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn sorted_values(t: &Tensor) -> Vec<u32> {
    let mut v: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

fn aps_suite(opts: Options) -> Vec<Case> {
    let mut rng = derive(opts.seed, "oracle/aps");
    let mut enum_ok = true;
    let mut inv_ok = true;
    for _ in 0..100 {
        let c = if rng.random::<bool>() { 1 } else { 4 };
        let (h, w) = (2 * rng.random_range(1..=8), 2 * rng.random_range(1..=8));
        let x = random_tensor(&mut rng, &[1, c, h, w], 1.0);
        let comps = polyphase_components(&x, (2, 2)).expect("stride fits");
        for (ix, comp) in &comps {
            for ch in 0..c {
                for r in 0..h / 2 {
                    for s in 0..w / 2 {
                        enum_ok &= comp.at4(0, ch, r, s) == x.at4(0, ch, 2 * r + ix.i, 2 * s + ix.j);
                    }
                }
            }
        }
        enum_ok &= comps.len() == 4;
        for p in [1u8, 2] {
            let (base, _) = aps_subsample(&x, (2, 2), p).expect("valid");
            for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                let (shifted, _) = aps_subsample(&roll(&x, dh, dw), (2, 2), p).expect("valid");
                inv_ok &= sorted_values(&base) == sorted_values(&shifted);
            }
        }
    }
    vec![
        case(Suite::Aps, "polyphase-enumeration", enum_ok, "100 maps, stride 2"),
        case(Suite::Aps, "aps-circular-shift-invariance", inv_ok, "100 maps, l1 and l2, 3 shifts"),
    ]
}

/// Largest relative error between analytic and central-difference gradients,
/// with differences of `f` taken in f64.
fn fd_compare(analytic: &[f32], theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = theta.to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = numeric.abs().max(f64::from(a).abs()).max(1e-6);
        worst = worst.max((f64::from(a) - numeric).abs() / denom);
    }
    worst
}

fn softmax64(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn fd_suite(opts: Options) -> Vec<Case> {
    let mut rng = derive(opts.seed, "oracle/fd");
    let mut out = Vec::new();

    // Softmax-constrained kernel: L = sum(r * softmax(z)).
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let z = random_tensor(&mut rng, &[m, n], 2.0);
        let r = random_tensor(&mut rng, &[m, n], 1.0);
        let mut tape = Tape::new();
        let zv = tape.param(z.clone());
        let w = tape.softmax_rows(zv, m * n).expect("valid");
        let rv = tape.constant(r.clone());
        let prod = tape.mul(w, rv).expect("same shape");
        let loss = tape.sum(prod);
        let g = tape.backward(loss).expect("scalar").take(zv).expect("param");
        let theta: Vec<f64> = z.data().iter().map(|&v| f64::from(v)).collect();
        let rr: Vec<f64> = r.data().iter().map(|&v| f64::from(v)).collect();
        worst = worst.max(fd_compare(g.data(), &theta, 1e-3, |t| {
            softmax64(t).iter().zip(&rr).map(|(a, b)| a * b).sum()
        }));
    }
    out.push(case(Suite::Fd, "tlpf-logits", worst < 1e-3, format!("max rel err {worst:.3e}")));

    // Mean binary cross-entropy with respect to the scores.
    let s = Tensor::from_fn(&[4, 3], |_| 0.05 + 0.9 * rng.random::<f32>());
    let t = Tensor::from_fn(&[4, 3], |_| rng.random::<f32>());
    let mut tape = Tape::new();
    let sv = tape.param(s.clone());
    let loss = tape.bce(sv, t.clone()).expect("same shape");
    let g = tape.backward(loss).expect("scalar").take(sv).expect("param");
    let theta: Vec<f64> = s.data().iter().map(|&v| f64::from(v)).collect();
    let tt: Vec<f64> = t.data().iter().map(|&v| f64::from(v)).collect();
    let worst = fd_compare(g.data(), &theta, 1e-5, |p| {
        p.iter().zip(&tt).map(|(s, t)| -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())).sum::<f64>() / p.len() as f64
    });
    out.push(case(Suite::Fd, "bce-scores", worst < 1e-4, format!("max rel err {worst:.3e}")));

    // Convolution weights: L = sum(r * conv(x, w)), differenced on the f64 reference.
    let x = random_tensor(&mut rng, &[2, 2, 5, 6], 1.0);
    let w = random_tensor(&mut rng, &[3, 2, 3, 3], 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let y = tape.conv2d(xv, wv, None, (2, 1), Padding::Same).expect("valid");
    let r = random_tensor(&mut rng, tape.value(y).shape(), 1.0);
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv).expect("same shape");
    let loss = tape.sum(prod);
    let g = tape.backward(loss).expect("scalar").take(wv).expect("param");
    let theta: Vec<f64> = w.data().iter().map(|&v| f64::from(v)).collect();
    let worst = fd_compare(g.data(), &theta, 1e-3, |p| conv_loss64(&x, p, w.shape(), (2, 1), &r));
    out.push(case(Suite::Fd, "conv2d-weights", worst < 1e-3, format!("max rel err {worst:.3e}")));
    out
}

fn conv_loss64(x: &Tensor, w: &[f64], wshape: &[usize], stride: (usize, usize), r: &Tensor) -> f64 {
    let (n, c, h, wd) = x.dims4().expect("rank 4");
    let (f, kh, kw) = (wshape[0], wshape[2], wshape[3]);
    let gh = Padding::Same.resolve(h, kh, stride.0).expect("fits");
    let gw = Padding::Same.resolve(wd, kw, stride.1).expect("fits");
    let mut total = 0.0;
    for b in 0..n {
        for o in 0..f {
            for i in 0..gh.out {
                for j in 0..gw.out {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let rr = (i * stride.0 + u) as isize - gh.pad_before as isize;
                                let ss = (j * stride.1 + v) as isize - gw.pad_before as isize;
                                if rr >= 0 && ss >= 0 && (rr as usize) < h && (ss as usize) < wd {
                                    acc += f64::from(x.at4(b, ch, rr as usize, ss as usize)) * w[((o * c + ch) * kh + u) * kw + v];
                                }
                            }
                        }
                    }
                    total += acc * f64::from(r.data()[((b * f + o) * gh.out + i) * gw.out + j]);
                }
            }
        }
    }
    total
}
