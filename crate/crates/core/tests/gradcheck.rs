//! Tape gradients against central finite differences of independent `f64`
//! reference implementations written with plain loops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shiftpool_core::pooling::{aps_select, tlpf_materialize};
use shiftpool_core::rng::seeded;
use shiftpool_core::{Padding, Tape, Tensor};

const BN_EPS: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn to_tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Plain 4D array used by the reference network.
#[derive(Clone)]
struct Map {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Map {
    fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Map { n, c, h, w, v: vec![0.0; n * c * h * w] }
    }
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }
    fn set(&mut self, n: usize, c: usize, y: usize, x: usize, val: f64) {
        self.v[((n * self.c + c) * self.h + y) * self.w + x] = val;
    }
}

/// "Same" zero-padded convolution, weight `[F, C, kh, kw]`.
fn conv(x: &Map, w: &[f64], f: usize, kh: usize, kw: usize, b: &[f64]) -> Map {
    let mut out = Map::zeros(x.n, f, x.h, x.w);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    for n in 0..x.n {
        for fo in 0..f {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut s = b[fo];
                    for c in 0..x.c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (sy, sx) = (y as isize + i as isize - ph as isize, xx as isize + j as isize - pw as isize);
                                if sy >= 0 && sx >= 0 && (sy as usize) < x.h && (sx as usize) < x.w {
                                    s += w[((fo * x.c + c) * kh + i) * kw + j] * x.at(n, c, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.set(n, fo, y, xx, s);
                }
            }
        }
    }
    out
}

fn batch_norm(x: &Map, gamma: &[f64], beta: &[f64]) -> Map {
    let mut out = x.clone();
    let count = (x.n * x.h * x.w) as f64;
    for c in 0..x.c {
        let vals: Vec<f64> = (0..x.n)
            .flat_map(|n| (0..x.h).flat_map(move |y| (0..x.w).map(move |xx| (n, y, xx))))
            .map(|(n, y, xx)| x.at(n, c, y, xx))
            .collect();
        let mean = vals.iter().sum::<f64>() / count;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for n in 0..x.n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    out.set(n, c, y, xx, gamma[c] * (x.at(n, c, y, xx) - mean) * inv + beta[c]);
                }
            }
        }
    }
    out
}

fn relu(x: &Map) -> Map {
    Map { v: x.v.iter().map(|&v| v.max(0.0)).collect(), ..x.clone() }
}

/// Unit-stride 2x2 max over in-range cells, window anchored top-left.
fn dense_max2(x: &Map) -> Map {
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut m = f64::NEG_INFINITY;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        if y + dy < x.h && xx + dx < x.w {
                            m = m.max(x.at(n, c, y + dy, xx + dx));
                        }
                    }
                    out.set(n, c, y, xx, m);
                }
            }
        }
    }
    out
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Per-channel `k x k` filtering with zero "same" padding.
fn depthwise(x: &Map, kernels: &[f64], k: usize) -> Map {
    let mut out = x.clone();
    let p = (k - 1) / 2;
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut s = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let (sy, sx) = (y as isize + i as isize - p as isize, xx as isize + j as isize - p as isize);
                            if sy >= 0 && sx >= 0 && (sy as usize) < x.h && (sx as usize) < x.w {
                                s += kernels[(c * k + i) * k + j] * x.at(n, c, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(n, c, y, xx, s);
                }
            }
        }
    }
    out
}

fn gather(x: &Map, s: usize, offsets: &[(usize, usize)]) -> Map {
    let (oh, ow) = (x.h.div_ceil(s), x.w.div_ceil(s));
    let mut out = Map::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        let (i, j) = offsets[n];
        for c in 0..x.c {
            for y in 0..oh {
                for xx in 0..ow {
                    out.set(n, c, y, xx, x.at(n, c, (i + y * s) % x.h, (j + xx * s) % x.w));
                }
            }
        }
    }
    out
}

/// Spectral mean then temporal max, `[N, C]`.
fn global_pool(x: &Map) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.n * x.c);
    for n in 0..x.n {
        for c in 0..x.c {
            let m = (0..x.h)
                .map(|y| (0..x.w).map(|xx| x.at(n, c, y, xx)).sum::<f64>() / x.w as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            out.push(m);
        }
    }
    out
}

fn bce(scores: &[f64], targets: &[f64]) -> f64 {
    scores.iter().zip(targets).map(|(s, t)| -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())).sum::<f64>() / scores.len() as f64
}

/// Parameter layout of the reference network, in order.
const SHAPES: [(&str, &[usize]); 9] = [
    ("w1", &[3, 1, 3, 3]),
    ("b1", &[3]),
    ("gamma", &[3]),
    ("beta", &[3]),
    ("logits", &[3, 3, 3]),
    ("w2", &[2, 3, 3, 1]),
    ("b2", &[2]),
    ("wl", &[2, 3]),
    ("bl", &[3]),
];

fn split(params: &[f64]) -> Vec<&[f64]> {
    let mut out = Vec::new();
    let mut at = 0;
    for (_, shape) in SHAPES {
        let len: usize = shape.iter().product();
        out.push(&params[at..at + len]);
        at += len;
    }
    out
}

/// conv 3x3 -> BN -> ReLU -> dense max 2x2 -> TLPF 3x3 -> gather s=2 ->
/// conv 3x1 -> ReLU -> global pool -> linear -> sigmoid -> BCE.
fn reference_loss(params: &[f64], x: &Map, offsets: &[(usize, usize)], targets: &[f64]) -> f64 {
    let p = split(params);
    let h = relu(&batch_norm(&conv(x, p[0], 3, 3, 3, p[1]), p[2], p[3]));
    let h = dense_max2(&h);
    let kernels: Vec<f64> = p[4].chunks(9).flat_map(softmax).collect();
    let h = gather(&depthwise(&h, &kernels, 3), 2, offsets);
    let h = relu(&conv(&h, p[5], 2, 3, 1, p[6]));
    let pooled = global_pool(&h);
    let mut scores = Vec::new();
    for n in 0..x.n {
        for m in 0..3 {
            let z = p[8][m] + (0..2).map(|k| pooled[n * 2 + k] * p[7][k * 3 + m]).sum::<f64>();
            scores.push(1.0 / (1.0 + (-z).exp()));
        }
    }
    bce(&scores, targets)
}

#[test]
fn network_gradients_match_finite_differences() {
    let mut rng = seeded(11);
    let (n, h, w) = (2, 8, 6);
    let x = Map { n, c: 1, h, w, v: uniform(&mut rng, n * h * w, 1.0) };
    let targets = vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
    let total: usize = SHAPES.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    assert!((90..=110).contains(&total));
    let params: Vec<f64> = SHAPES
        .iter()
        .flat_map(|(name, shape)| {
            let len: usize = shape.iter().product();
            match *name {
                "gamma" => (0..len).map(|_| rng.random_range(0.8..1.2)).collect::<Vec<_>>(),
                _ => uniform(&mut rng, len, 0.6),
            }
        })
        .collect();

    let mut tape = Tape::new();
    let xv = tape.constant(to_tensor(&[n, 1, h, w], &x.v));
    let mut vars = Vec::new();
    for ((_, shape), vals) in SHAPES.iter().zip(split(&params)) {
        vars.push(tape.param(to_tensor(shape, vals)));
    }
    let c1 = tape.conv2d(xv, vars[0], Some(vars[1]), (1, 1), Padding::Same).unwrap();
    let (bn, _) = tape.batch_norm_train(c1, vars[2], vars[3], BN_EPS as f32).unwrap();
    let r1 = tape.relu(bn);
    let mp = tape.max_pool_dense(r1, 2).unwrap();
    let k = tape.softmax_rows(vars[4], 9).unwrap();
    let lp = tape.depthwise_conv2d(mp, k, (1, 1), Padding::Same).unwrap();
    let picks = aps_select(tape.value(lp), (2, 2), 1).unwrap();
    let offsets: Vec<(usize, usize)> = picks.iter().map(|p| (p.i, p.j)).collect();
    let g = tape.gather_strided(lp, (2, 2), offsets.clone()).unwrap();
    let c2 = tape.conv2d(g, vars[5], Some(vars[6]), (1, 1), Padding::Same).unwrap();
    let r2 = tape.relu(c2);
    let sp = tape.mean_axis(r2, 3).unwrap();
    let pooled = tape.max_axis(sp, 2).unwrap();
    let z = tape.linear(pooled, vars[7], vars[8]).unwrap();
    let s = tape.sigmoid(z);
    let loss = tape.bce(s, to_tensor(&[n, 3], &targets)).unwrap();

    let f64_loss = reference_loss(&params, &x, &offsets, &targets);
    assert!((tape.value(loss).data()[0] as f64 - f64_loss).abs() < 1e-5);

    let mut grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.take(v).unwrap().into_data().into_iter().map(f64::from))
        .collect();
    assert_eq!(analytic.len(), total);

    let step = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..total {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[i] += step;
        minus[i] -= step;
        let numeric = (reference_loss(&plus, &x, &offsets, &targets) - reference_loss(&minus, &x, &offsets, &targets)) / (2.0 * step);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    assert!(worst < 1e-3, "worst relative error {worst:.3e}");
}

fn tlpf_shapes() -> Vec<(usize, usize)> {
    let mut shapes = vec![(3, 3), (4, 4), (5, 5), (6, 6)];
    shapes.extend((4..=6).map(|n| (1, n)));
    shapes.extend((4..=6).map(|m| (m, 1)));
    shapes
}

#[test]
fn tlpf_weights_and_gradients_over_random_draws() {
    let mut rng = seeded(2);
    let shapes = tlpf_shapes();
    let mut worst_sum = 0.0f64;
    let mut worst_grad = 0.0f64;
    for draw in 0..1000 {
        let (m, n) = shapes[draw % shapes.len()];
        let logits = uniform(&mut rng, m * n, 3.0);
        let raw = to_tensor(&[m, n], &logits);
        let kernel = tlpf_materialize(&raw).unwrap();
        assert!(kernel.weights().data().iter().all(|&v| v > 0.0));
        worst_sum = worst_sum.max((kernel.weights().sum() - 1.0).abs());

        let coeffs = uniform(&mut rng, m * n, 1.0);
        let mut tape = Tape::new();
        let lv = tape.param(raw);
        let sm = tape.softmax_rows(lv, m * n).unwrap();
        let cv = tape.constant(to_tensor(&[m, n], &coeffs));
        let prod = tape.mul(sm, cv).unwrap();
        let loss = tape.sum(prod);
        let grad = tape.backward(loss).unwrap().take(lv).unwrap();

        let f = |l: &[f64]| softmax(l).iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..m * n {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[i] += 1e-6;
            minus[i] -= 1e-6;
            let numeric = (f(&plus) - f(&minus)) / 2e-6;
            worst_grad = worst_grad.max(rel_err(grad.data()[i] as f64, numeric));
        }
    }
    assert!(worst_sum < 1e-6, "unit-sum error {worst_sum:.3e}");
    assert!(worst_grad < 1e-3, "gradient relative error {worst_grad:.3e}");
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = seeded(3);
    for _ in 0..50 {
        let scores: Vec<f64> = (0..12).map(|_| rng.random_range(0.05..0.95)).collect();
        let targets: Vec<f64> = (0..12).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut tape = Tape::new();
        let sv = tape.param(to_tensor(&[3, 4], &scores));
        let loss = tape.bce(sv, to_tensor(&[3, 4], &targets)).unwrap();
        let grad = tape.backward(loss).unwrap().take(sv).unwrap();
        for i in 0..12 {
            let s32 = scores[i] as f32 as f64;
            let mut plus: Vec<f64> = scores.iter().map(|&v| v as f32 as f64).collect();
            let mut minus = plus.clone();
            plus[i] = s32 + 1e-7;
            minus[i] = s32 - 1e-7;
            let numeric = (bce(&plus, &targets) - bce(&minus, &targets)) / 2e-7;
            assert!((grad.data()[i] as f64 - numeric).abs() < 1e-4, "{} vs {numeric}", grad.data()[i]);
        }
    }
}
