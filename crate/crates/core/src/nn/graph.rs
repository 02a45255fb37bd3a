//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to compute the vector-Jacobian product. [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients into every node that depends on
//! a parameter.

use std::collections::BTreeMap;
use std::ops::Range;

use super::conv::{col2im, im2col, ConvGeometry, Padding};
use super::tensor::{matmul, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape(Var),
    SegmentSoftmax {
        x: Var,
        segments: Vec<Range<usize>>,
    },
    SegmentWeightedSum {
        x: Var,
        weights: Var,
        segments: Vec<Range<usize>>,
    },
    ConcatRows(Vec<Var>),
    PackChannels(Vec<Var>),
    UnpackChannels {
        x: Var,
        offset: usize,
    },
    Mse {
        pred: Var,
        target: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch-norm normalization source.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of this batch.
    Train,
    /// Normalize with stored running statistics.
    Infer { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, as used for running estimates.
    pub var: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked, e.g. an input under a gradient check.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A named trainable parameter.
    pub fn param(&mut self, name: &str, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Convolution of `x: [N, C, D, H, W]` with `w: [O, C, kd, kh, kw]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 3], padding: Padding) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] {
            return Err(shape_err("conv", &ws, &xs));
        }
        let geom = ConvGeometry::new(
            xs[1],
            ws[0],
            [xs[2], xs[3], xs[4]],
            [ws[2], ws[3], ws[4]],
            stride,
            padding,
        )?;
        if let Some(b) = b {
            if self.value(b).shape() != [ws[0]] {
                return Err(shape_err("conv bias", &[ws[0]], self.value(b).shape()));
            }
        }
        let n = xs[0];
        let (k, p, o) = (geom.col_rows(), geom.out_len(), geom.out_channels);
        let in_len = geom.in_channels * geom.in_len();
        let mut out = vec![T::zero(); n * o * p];
        let mut cols = vec![T::zero(); k * p];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                im2col(&geom, &xv[s * in_len..(s + 1) * in_len], &mut cols);
                matmul(o, k, p, wv, false, &cols, false, &mut out[s * o * p..(s + 1) * o * p], false);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for s in 0..n {
                    for (c, &bc) in bv.iter().enumerate() {
                        for v in &mut out[(s * o + c) * p..(s * o + c + 1) * p] {
                            *v += bc;
                        }
                    }
                }
            }
        }
        let [od, oh, ow] = geom.out_dims;
        let value = Tensor::new(vec![n, o, od, oh, ow], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv { x, w, b, geom }, rg))
    }

    /// Per-channel normalization of `x: [N, C, ...]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(shape_err("batch_norm", &[0, 0], &xs));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(shape_err("batch_norm", &[c], self.value(p).shape()));
            }
        }
        let m = n * s;
        if m == 0 {
            return Err(Error::EmptyBatchNorm);
        }
        let eps = T::from_f64_lossy(BN_EPS);
        let xv = self.value(x).data();
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for i in 0..n {
                    for ch in 0..c {
                        let row = &xv[(i * c + ch) * s..(i * c + ch + 1) * s];
                        mean[ch] += row.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                    }
                }
                for mu in mean.iter_mut() {
                    *mu /= m as f64;
                }
                for i in 0..n {
                    for ch in 0..c {
                        let row = &xv[(i * c + ch) * s..(i * c + ch + 1) * s];
                        sq[ch] += row
                            .iter()
                            .map(|v| {
                                let d = v.to_f64_lossy() - mean[ch];
                                d * d
                            })
                            .sum::<f64>();
                    }
                }
                let var_b: Vec<f64> = sq.iter().map(|v| v / m as f64).collect();
                let unbiased = if m > 1 {
                    sq.iter().map(|v| T::from_f64_lossy(v / (m - 1) as f64)).collect()
                } else {
                    vec![T::zero(); c]
                };
                let stats = BatchStats {
                    mean: mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                    var: unbiased,
                };
                (
                    mean.iter().map(|&v| T::from_f64_lossy(v)).collect::<Vec<T>>(),
                    var_b.iter().map(|&v| T::from_f64_lossy(v)).collect::<Vec<T>>(),
                    Some(stats),
                )
            }
            BatchNormMode::Infer { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batch_norm running stats", &[c], &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * s;
                let (mu, is, g, b) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for (o, &v) in out[base..base + s].iter_mut().zip(&xv[base..base + s]) {
                    *o = g * (v - mu) * is + b;
                }
            }
        }
        let value = Tensor::new(xs, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let batch_stats = stats.is_some();
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Mean over all trailing dimensions: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let xs = t.shape();
        if xs.len() < 3 {
            return Err(shape_err("global_avg_pool", &[0, 0, 0], xs));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        if s == 0 {
            return Err(Error::EmptyInput("global_avg_pool"));
        }
        let inv = T::from_f64_lossy(1.0 / s as f64);
        let data = t.data().chunks_exact(s).map(|row| row.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(vec![n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// `x: [N, in]`, `w: [out, in]`, `b: [out]` to `[N, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", &ws, &xs));
        }
        if bs != [ws[0]] {
            return Err(shape_err("linear bias", &[ws[0]], &bs));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * dout];
        for row in out.chunks_exact_mut(dout) {
            row.copy_from_slice(self.value(b).data());
        }
        matmul(n, din, dout, self.value(x).data(), false, self.value(w).data(), true, &mut out, true);
        let value = Tensor::new(vec![n, dout], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Softmax within each segment of the leading dimension of `x: [N]` or `[N, 1]`.
    pub fn segment_softmax(&mut self, x: Var, segments: &[Range<usize>]) -> Result<Var> {
        let t = self.value(x);
        check_segments("segment_softmax", segments, t.len())?;
        if t.shape().iter().skip(1).any(|&d| d != 1) {
            return Err(shape_err("segment_softmax", &[t.shape()[0], 1], t.shape()));
        }
        let mut out = vec![T::zero(); t.len()];
        for seg in segments {
            let logits = &t.data()[seg.clone()];
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (o, &l) in out[seg.clone()].iter_mut().zip(logits) {
                *o = (l - max).exp();
                total += *o;
            }
            for o in &mut out[seg.clone()] {
                *o = *o / total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                x,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// `out[b] = sum_{i in segment b} weights[i] * x[i]` for `x: [N, ...]`.
    pub fn segment_weighted_sum(&mut self, x: Var, weights: Var, segments: &[Range<usize>]) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(weights));
        let n = *tx.shape().first().ok_or(Error::EmptyInput("segment_weighted_sum"))?;
        if tw.len() != n {
            return Err(shape_err("segment_weighted_sum", &[n], tw.shape()));
        }
        check_segments("segment_weighted_sum", segments, n)?;
        let row = tx.len() / n.max(1);
        let mut out = vec![T::zero(); segments.len() * row];
        for (b, seg) in segments.iter().enumerate() {
            let dst = &mut out[b * row..(b + 1) * row];
            for i in seg.clone() {
                let w = tw.data()[i];
                for (o, &v) in dst.iter_mut().zip(&tx.data()[i * row..(i + 1) * row]) {
                    *o += w * v;
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = segments.len();
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(x) || self.rg(weights);
        Ok(self.push(
            value,
            Op::SegmentWeightedSum {
                x,
                weights,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along the leading dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().is_empty() || t.shape()[1..] != tail[..] {
                return Err(shape_err("concat_rows", &tail, t.shape()));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Lays out `[n_i, C, ...]` parts of differing trailing shapes as one
    /// `[1, C, L]` tensor, each channel holding every part's values in order.
    pub fn pack_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("pack_channels"))?;
        let c = match self.value(*first).shape() {
            [_, c, ..] => *c,
            other => return Err(shape_err("pack_channels", &[0, 0], other)),
        };
        let mut len = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() < 2 || s[1] != c {
                return Err(shape_err("pack_channels", &[0, c], s));
            }
            len += self.value(p).len() / c;
        }
        let mut data = vec![T::zero(); c * len];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let s: usize = t.shape()[2..].iter().product();
            for (i, sample) in t.data().chunks_exact(c * s).enumerate() {
                for (ch, row) in sample.chunks_exact(s).enumerate() {
                    let at = ch * len + offset + i * s;
                    data[at..at + s].copy_from_slice(row);
                }
            }
            offset += t.len() / c;
        }
        let value = Tensor::new(vec![1, c, len], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::PackChannels(parts.to_vec()), rg))
    }

    /// Inverse of [`Graph::pack_channels`] for one part: reads a `shape`
    /// tensor starting at position `offset` of every channel of `x: [1, C, L]`.
    pub fn unpack_channels(&mut self, x: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let (c, len) = match xs[..] {
            [1, c, len] => (c, len),
            _ => return Err(shape_err("unpack_channels", &[1, 0, 0], &xs)),
        };
        if shape.len() < 2 || shape[1] != c {
            return Err(shape_err("unpack_channels", &[0, c], shape));
        }
        let n = shape[0];
        let s: usize = shape[2..].iter().product();
        if offset + n * s > len {
            return Err(shape_err("unpack_channels", &[len], &[offset + n * s]));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * s);
        for i in 0..n {
            for ch in 0..c {
                let at = ch * len + offset + i * s;
                data.extend_from_slice(&xv[at..at + s]);
            }
        }
        let value = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::UnpackChannels { x, offset }, rg))
    }

    /// Mean squared error against a constant target; a scalar node.
    pub fn mse(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(shape_err("mse", target.shape(), p.shape()));
        }
        if p.is_empty() {
            return Err(Error::EmptyInput("mse"));
        }
        let sum: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = (a - b).to_f64_lossy();
                d * d
            })
            .sum();
        let value = Tensor::scalar(T::from_f64_lossy(sum / p.len() as f64));
        let rg = self.rg(pred);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward", &[], lv.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let n = xv.shape()[0];
                let (k, p, o) = (geom.col_rows(), geom.out_len(), geom.out_channels);
                let in_len = geom.in_channels * geom.in_len();
                let gd = g.data();
                let mut cols = vec![T::zero(); k * p];
                let mut dcols = vec![T::zero(); k * p];
                let want_w = self.rg(*w);
                let want_x = self.rg(*x);
                let mut dw = vec![T::zero(); wv.len()];
                let mut dx = if want_x { vec![T::zero(); xv.len()] } else { Vec::new() };
                for s in 0..n {
                    let gs = &gd[s * o * p..(s + 1) * o * p];
                    if want_w {
                        im2col(geom, &xv.data()[s * in_len..(s + 1) * in_len], &mut cols);
                        matmul(o, p, k, gs, false, &cols, true, &mut dw, true);
                    }
                    if want_x {
                        matmul(k, o, p, wv.data(), true, gs, false, &mut dcols, false);
                        col2im(geom, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); o];
                    for s in 0..n {
                        for (c, d) in db.iter_mut().enumerate() {
                            *d += gd[(s * o + c) * p..(s * o + c + 1) * p].iter().copied().sum::<T>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![o], db)?);
                }
                if want_w {
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
                if want_x {
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let xv = self.value(*x);
                let xs = xv.shape();
                let (n, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let m = T::from_f64_lossy((n * s) as f64);
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * s;
                        for (&dy, &v) in g.data()[base..base + s].iter().zip(&xv.data()[base..base + s]) {
                            let xhat = (v - mean[ch]) * inv_std[ch];
                            dgamma[ch] += dy * xhat;
                            dbeta[ch] += dy;
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); xv.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * s;
                            let scale = gv[ch] * inv_std[ch];
                            for ((d, &dy), &v) in dx[base..base + s]
                                .iter_mut()
                                .zip(&g.data()[base..base + s])
                                .zip(&xv.data()[base..base + s])
                            {
                                *d = if *batch_stats {
                                    let xhat = (v - mean[ch]) * inv_std[ch];
                                    scale / m * (m * dy - dbeta[ch] - xhat * dgamma[ch])
                                } else {
                                    scale * dy
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xs.to_vec(), dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::new(vec![c], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![c], dbeta)?);
            }
            Op::Relu(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&d, &y)| if y > T::zero() { d } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(*x);
                let s: usize = xv.shape()[2..].iter().product();
                let inv = T::from_f64_lossy(1.0 / s as f64);
                let mut dx = Vec::with_capacity(xv.len());
                for &d in g.data() {
                    dx.extend(std::iter::repeat_n(d * inv, s));
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[0];
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    matmul(n, dout, din, g.data(), false, wv.data(), false, &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(vec![n, din], dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    matmul(dout, n, din, g.data(), true, xv.data(), false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(vec![dout, din], dw)?);
                }
                let mut db = vec![T::zero(); dout];
                for row in g.data().chunks_exact(dout) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *b, Tensor::new(vec![dout], db)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&shape)?);
            }
            Op::SegmentSoftmax { x, segments } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for seg in segments {
                    let dot: T = seg.clone().map(|i| y[i] * g.data()[i]).sum();
                    for i in seg.clone() {
                        dx[i] = y[i] * (g.data()[i] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), dx)?);
            }
            Op::SegmentWeightedSum { x, weights, segments } => {
                let (xv, wv) = (self.value(*x), self.value(*weights));
                let n = xv.shape()[0];
                let row = xv.len() / n;
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                for (b, seg) in segments.iter().enumerate() {
                    let gb = &g.data()[b * row..(b + 1) * row];
                    for i in seg.clone() {
                        let xi = &xv.data()[i * row..(i + 1) * row];
                        dw[i] = xi.iter().zip(gb).map(|(&a, &c)| a * c).sum();
                        let w = wv.data()[i];
                        for (d, &c) in dx[i * row..(i + 1) * row].iter_mut().zip(gb) {
                            *d = w * c;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                self.accumulate(grads, *weights, Tensor::new(wv.shape().to_vec(), dw)?);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let part = g.data()[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    self.accumulate(grads, p, Tensor::new(t.shape().to_vec(), part)?);
                }
            }
            Op::PackChannels(parts) => {
                let len = g.shape()[2];
                let c = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let s: usize = t.shape()[2..].iter().product();
                    let mut part = Vec::with_capacity(t.len());
                    for i in 0..t.shape()[0] {
                        for ch in 0..c {
                            let at = ch * len + offset + i * s;
                            part.extend_from_slice(&g.data()[at..at + s]);
                        }
                    }
                    offset += t.len() / c;
                    self.accumulate(grads, p, Tensor::new(t.shape().to_vec(), part)?);
                }
            }
            Op::UnpackChannels { x, offset } => {
                let xs = self.value(*x).shape().to_vec();
                let (c, len) = (xs[1], xs[2]);
                let s: usize = g.shape()[2..].iter().product();
                let mut dx = vec![T::zero(); c * len];
                for (i, sample) in g.data().chunks_exact(c * s).enumerate() {
                    for (ch, row) in sample.chunks_exact(s).enumerate() {
                        let at = ch * len + offset + i * s;
                        dx[at..at + s].copy_from_slice(row);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xs, dx)?);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let scale = g.data()[0] * T::from_f64_lossy(2.0 / p.len() as f64);
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn check_segments(op: &'static str, segments: &[Range<usize>], n: usize) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::EmptyInput(op));
    }
    let mut next = 0;
    for seg in segments {
        if seg.start != next || seg.is_empty() {
            return Err(shape_err(op, &[next], &[seg.start, seg.end]));
        }
        next = seg.end;
    }
    if next != n {
        return Err(shape_err(op, &[n], &[next]));
    }
    Ok(())
}

/// Gradients from one reverse pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a node; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn param(&self, name: &str) -> Option<Tensor<T>> {
        self.params.get(name).map(|&v| self.get(v))
    }

    /// All parameter gradients keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(k, &v)| (k.clone(), self.get(v)))
            .collect()
    }
}

/// Softmax of a plain vector with max-subtraction.
pub fn softmax<T: Element>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn relu<T: Element>(x: T) -> T {
    x.max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = g.input(t(&[1, 1, 1, 4, 4], &data));
        let w = g.param("w", t(&[1, 1, 1, 1, 1], &[1.0]));
        let y = g.conv(x, w, None, [1, 1, 1], Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn all_ones_valid_conv() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 1, 3, 3], &[1.0; 9]));
        let w = g.param("w", t(&[1, 1, 1, 3, 3], &[1.0; 9]));
        let y = g.conv(x, w, None, [1, 1, 1], Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn strided_same_conv_shape() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f32>::zeros(&[2, 3, 1, 8, 8]));
        let w = g.param("w", Tensor::zeros(&[5, 3, 1, 3, 3]));
        let y = g.conv(x, w, None, [1, 2, 2], Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 1, 4, 4]);
    }

    #[test]
    fn conv_channel_mismatch_reports_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f32>::zeros(&[1, 2, 1, 4, 4]));
        let w = g.param("w", Tensor::zeros(&[1, 3, 1, 3, 3]));
        let err = g.conv(x, w, None, [1, 1, 1], Padding::Same).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "conv", .. }), "{err}");
    }

    #[test]
    fn batch_norm_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 1], &[1.0, 3.0]));
        let gamma = g.param("g", t(&[1], &[1.0]));
        let beta = g.param("b", t(&[1], &[0.0]));
        let (y, stats) = g.batch_norm(x, gamma, beta, BatchNormMode::Train).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4);
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![2.0]);

        let gamma2 = g.param("g2", t(&[1], &[2.0]));
        let beta2 = g.param("b2", t(&[1], &[5.0]));
        let (y2, _) = g.batch_norm(x, gamma2, beta2, BatchNormMode::Train).unwrap();
        let v = g.value(y2).data();
        assert!((v[0] - 3.0).abs() < 1e-4 && (v[1] - 7.0).abs() < 1e-4);

        let c = g.input(t(&[4, 1], &[2.5; 4]));
        let (y3, _) = g.batch_norm(c, gamma, beta, BatchNormMode::Train).unwrap();
        assert!(g.value(y3).data().iter().all(|v| v.abs() < 1e-6));

        let empty = g.input(Tensor::zeros(&[0, 1]));
        assert!(matches!(
            g.batch_norm(empty, gamma, beta, BatchNormMode::Train),
            Err(Error::EmptyBatchNorm)
        ));
    }

    #[test]
    fn pack_round_trip_and_joint_statistics() {
        let mut g = Graph::new();
        let a = g.input(t(&[1, 2, 1, 1, 2], &[1.0, 2.0, 10.0, 20.0]));
        let b = g.input(t(&[2, 2, 1], &[3.0, 30.0, 4.0, 40.0]));
        let p = g.pack_channels(&[a, b]).unwrap();
        assert_eq!(g.value(p).shape(), &[1, 2, 4]);
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
        let back = g.unpack_channels(p, 2, &[2, 2, 1]).unwrap();
        assert_eq!(g.value(back).data(), g.value(b).data());
        let gamma = g.param("g", t(&[2], &[1.0, 1.0]));
        let beta = g.param("b", t(&[2], &[0.0, 0.0]));
        let (_, stats) = g.batch_norm(p, gamma, beta, BatchNormMode::Train).unwrap();
        assert_eq!(stats.unwrap().mean, vec![2.5, 25.0]);
        assert!(g.unpack_channels(p, 3, &[2, 2, 1]).is_err());
        let c = g.input(t(&[1, 3], &[0.0; 3]));
        assert!(g.pack_channels(&[a, c]).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, 1.0]));
        let w = g.param("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.param("b", t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);

        let x = g.input(t(&[1, 2], &[0.3, -0.7]));
        let eye = g.param("eye", t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.linear(x, eye, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.3, -0.7]);

        let zw = g.param("zw", t(&[2, 2], &[0.0; 4]));
        let bias = g.param("bias", t(&[2], &[4.0, -1.0]));
        let y = g.linear(x, zw, bias).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, -1.0]);

        let bad = g.input(t(&[1, 3], &[0.0; 3]));
        assert!(g.linear(bad, w, b).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(relu(-1.0f64), 0.0);
        assert_eq!(relu(2.0f64), 2.0);
        assert!(softmax::<f64>(&[0.0; 5]).unwrap().iter().all(|v| (v - 0.2).abs() < 1e-15));
        let s = softmax(&[0.0f64, 3.0f64.ln()]).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-12 && (s[1] - 0.75).abs() < 1e-12);
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let p = g.variable(t(&[2], &[0.0, 0.0]));
        let l = g.mse(p, t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(g.value(l).data(), &[12.5]);
        let q = g.variable(t(&[2], &[3.0, 4.0]));
        let l0 = g.mse(q, t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(g.value(l0).data(), &[0.0]);
        assert!(g.mse(p, t(&[3], &[0.0; 3])).is_err());
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).data(), &[-3.0, -4.0]);
    }

    #[test]
    fn backward_requires_a_forward_pass() {
        let g = Graph::<f64>::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param("a", t(&[2], &[1.0, 2.0]));
        let unused = g.param("unused", t(&[3], &[1.0, 2.0, 3.0]));
        let l = g.mse(a, t(&[2], &[0.0, 0.0])).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0; 3]);
        assert_eq!(grads.param("a").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn segment_ops() {
        let mut g = Graph::new();
        let logits = g.variable(t(&[3, 1], &[0.0, 3.0f64.ln(), 5.0]));
        let a = g.segment_softmax(logits, &[0..2, 2..3]).unwrap();
        let v = g.value(a).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12 && v[2] == 1.0);
        let x = g.input(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let pooled = g.segment_weighted_sum(x, a, &[0..2, 2..3]).unwrap();
        assert_eq!(g.value(pooled).shape(), &[2, 2]);
        let p = g.value(pooled).data();
        assert!((p[0] - 2.5).abs() < 1e-12 && (p[1] - 3.5).abs() < 1e-12);
        assert_eq!(&p[2..], &[5.0, 6.0]);
        assert!(g.segment_softmax(logits, &[0..1, 2..3]).is_err());
    }
}
