//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value computed in a forward pass. Each operation
//! appends one node whose inputs are strictly older nodes, so walking the
//! node list backwards is a reverse topological order and visits every node
//! exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::ops::{self, conv, elementwise, norm, pool, BatchNormStats};
use crate::tensor::{Padding, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows { x: Var, row_len: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: (usize, usize), padding: Padding },
    Depthwise { x: Var, k: Var, stride: (usize, usize), padding: Padding },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, eps: f32, stats: BatchNormStats },
    BatchNormEval { x: Var, gamma: Var, beta: Var, eps: f32, mean: Vec<f32>, var: Vec<f32> },
    MaxPoolDense { x: Var, arg: Vec<u32> },
    Gather { x: Var, stride: (usize, usize), offsets: Vec<(usize, usize)> },
    MeanAxis { x: Var, axis: usize },
    MaxAxis { x: Var, axis: usize, arg: Vec<u32> },
    Linear { x: Var, w: Var, b: Var },
    Bce { scores: Var, targets: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err("reduce_axis", format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(dim_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f32) -> Var {
        let t = self.value(a).map(|v| v * k);
        self.push(t, Op::Scale(a, k), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum() as f32);
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::scalar((x.sum() / x.len() as f64) as f32);
        self.push(t, Op::Mean(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(elementwise::sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    /// Softmax over the trailing `row_len` elements (the tensor is viewed as
    /// `[len / row_len, row_len]`).
    pub fn softmax_rows(&mut self, a: Var, row_len: usize) -> Result<Var> {
        let x = self.value(a);
        if row_len == 0 || !x.len().is_multiple_of(row_len) {
            return Err(dim_err("softmax_rows", format!("row length {row_len} does not divide {:?}", x.shape())));
        }
        let t = Tensor::new(x.shape().to_vec(), elementwise::softmax_rows(x.data(), row_len))?;
        Ok(self.push(t, Op::SoftmaxRows { x: a, row_len }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let t = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, padding }, &inputs))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let t = ops::depthwise_conv2d(self.value(x), self.value(k), stride, padding)?;
        Ok(self.push(t, Op::Depthwise { x, k, stride, padding }, &[x, k]))
    }

    /// Training-mode batch norm; returns the batch statistics so the caller
    /// can update running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<(Var, BatchNormStats)> {
        let (t, stats) = ops::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let v = self.push(t, Op::BatchNormTrain { x, gamma, beta, eps, stats: stats.clone() }, &[x, gamma, beta]);
        Ok((v, stats))
    }

    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f32], var: &[f32], eps: f32) -> Result<Var> {
        let t = ops::batch_norm_eval(self.value(x), self.value(gamma), self.value(beta), mean, var, eps)?;
        let op = Op::BatchNormEval { x, gamma, beta, eps, mean: mean.to_vec(), var: var.to_vec() };
        Ok(self.push(t, op, &[x, gamma, beta]))
    }

    pub fn max_pool_dense(&mut self, x: Var, k: usize) -> Result<Var> {
        let (t, arg) = ops::dense_max_pool(self.value(x), k)?;
        Ok(self.push(t, Op::MaxPoolDense { x, arg }, &[x]))
    }

    /// Strided gather with a per-batch-element offset (see
    /// [`ops::gather_strided`]); the offsets are constants for the gradient.
    pub fn gather_strided(&mut self, x: Var, stride: (usize, usize), offsets: Vec<(usize, usize)>) -> Result<Var> {
        let t = ops::gather_strided(self.value(x), stride, &offsets)?;
        Ok(self.push(t, Op::Gather { x, stride, offsets }, &[x]))
    }

    /// Mean over `axis`, accumulated in `f64`; the axis is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let (outer, len, inner) = split_axis(v.shape(), axis)?;
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|a| v.data()[(o * len + a) * inner + i] as f64).sum();
                out[o * inner + i] = (s / len as f64) as f32;
            }
        }
        let t = Tensor::new(without_axis(v.shape(), axis), out)?;
        Ok(self.push(t, Op::MeanAxis { x, axis }, &[x]))
    }

    /// Max over `axis` (first maximum wins); the axis is removed.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let (outer, len, inner) = split_axis(v.shape(), axis)?;
        if len == 0 {
            return Err(dim_err("max_axis", "empty axis"));
        }
        let mut out = vec![0.0f32; outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for a in 1..len {
                    if v.data()[(o * len + a) * inner + i] > v.data()[(o * len + best) * inner + i] {
                        best = a;
                    }
                }
                out[o * inner + i] = v.data()[(o * len + best) * inner + i];
                arg[o * inner + i] = best as u32;
            }
        }
        let t = Tensor::new(without_axis(v.shape(), axis), out)?;
        Ok(self.push(t, Op::MaxAxis { x, axis, arg }, &[x]))
    }

    /// `x [N,K] @ w [K,M] + b [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        let (n, k, m) = match (xs, ws, bs) {
            (&[n, k], &[k2, m], &[m2]) if k == k2 && m == m2 => (n, k, m),
            _ => return Err(dim_err("linear", format!("x {xs:?}, w {ws:?}, b {bs:?}"))),
        };
        let mut out = elementwise::matmul(self.value(x).data(), self.value(w).data(), n, k, m);
        for row in out.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(self.value(b).data()) {
                *o += bv;
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Mean binary cross-entropy of probabilities `scores` against `targets`.
    pub fn bce(&mut self, scores: Var, targets: Tensor) -> Result<Var> {
        let s = self.value(scores);
        if s.shape() != targets.shape() {
            return Err(dim_err("bce", format!("scores {:?} vs targets {:?}", s.shape(), targets.shape())));
        }
        let t = Tensor::scalar(elementwise::bce(s.data(), targets.data()) as f32);
        Ok(self.push(t, Op::Bce { scores, targets }, &[scores]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = Tensor::new(g.shape().to_vec(), g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect())?;
                let gb = Tensor::new(g.shape().to_vec(), g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect())?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|v| v * k)),
            Op::Sum(a) => {
                let gs = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gs));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let gs = g.data()[0] / x.len() as f32;
                self.accumulate(grads, *a, Tensor::full(x.shape(), gs));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::SoftmaxRows { x, row_len } => {
                let data = elementwise::softmax_rows_backward(node.value.data(), g.data(), *row_len);
                self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), data)?);
            }
            Op::Reshape(a) => {
                let t = g.clone().reshape(self.value(*a).shape())?;
                self.accumulate(grads, *a, t);
            }
            Op::Conv2d { x, w, b, stride, padding } => {
                let (gx, gw, gb) = conv::conv2d_backward(self.value(*x), self.value(*w), g, *stride, *padding)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Depthwise { x, k, stride, padding } => {
                let (gx, gk) = conv::depthwise_conv2d_backward(self.value(*x), self.value(*k), g, *stride, *padding)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *k, gk);
            }
            Op::BatchNormTrain { x, gamma, beta, eps, stats } => {
                let (gx, gg, gb) = norm::batch_norm_train_backward(self.value(*x), self.value(*gamma), stats, *eps, g)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::BatchNormEval { x, gamma, beta, eps, mean, var } => {
                let (gx, gg, gb) =
                    norm::batch_norm_eval_backward(self.value(*x), self.value(*gamma), mean, var, *eps, g)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::MaxPoolDense { x, arg } => {
                let gx = pool::dense_max_pool_backward(self.value(*x).shape(), arg, g);
                self.accumulate(grads, *x, gx);
            }
            Op::Gather { x, stride, offsets } => {
                let gx = pool::gather_strided_backward(self.value(*x).shape(), *stride, offsets, g);
                self.accumulate(grads, *x, gx);
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.value(*x).shape();
                let (outer, len, inner) = split_axis(shape, *axis)?;
                let mut gx = vec![0.0f32; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            gx[(o * len + a) * inner + i] = g.data()[o * inner + i] / len as f32;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape.to_vec(), gx)?);
            }
            Op::MaxAxis { x, axis, arg } => {
                let shape = self.value(*x).shape();
                let (outer, len, inner) = split_axis(shape, *axis)?;
                let mut gx = vec![0.0f32; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let a = arg[o * inner + i] as usize;
                        gx[(o * len + a) * inner + i] += g.data()[o * inner + i];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape.to_vec(), gx)?);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                let gx = elementwise::matmul_a_bt(g.data(), wv.data(), n, k, m);
                let gw = elementwise::matmul_at_b(xv.data(), g.data(), n, k, m);
                let mut gb = vec![0.0f64; m];
                for row in g.data().chunks(m) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v as f64;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![n, k], gx)?);
                self.accumulate(grads, *w, Tensor::new(vec![k, m], gw)?);
                self.accumulate(grads, *b, Tensor::new(vec![m], gb.into_iter().map(|v| v as f32).collect())?);
            }
            Op::Bce { scores, targets } => {
                let s = self.value(*scores);
                let data = elementwise::bce_backward(s.data(), targets.data(), g.data()[0]);
                self.accumulate(grads, *scores, Tensor::new(s.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}
