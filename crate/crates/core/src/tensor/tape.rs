//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations append nodes to a [`Tape`] in execution order, so every node's
//! inputs precede it. [`Tape::backward`] walks the nodes once in reverse and
//! returns a [`Gradients`] table; the tape itself is left untouched, so
//! several backward passes can run over the same forward graph.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{elu, leaky_relu, masked_softmax, matmul_a_bt_into, matmul_at_b_into, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    Dropout(Var, Vec<f64>),
    MaskedSoftmax(Var),
    Gather(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Aggregate { weights: Var, features: Var, targets: Arc<[usize]>, sources: Arc<[usize]> },
    SoftmaxCrossEntropy { logits: Var, rows: Arc<[usize]>, classes: Arc<[usize]> },
    SigmoidCrossEntropy { logits: Var, rows: Arc<[usize]>, targets: Arc<[f64]> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of forward operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
}

/// Gradients of one scalar output with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let mut out = [0; 2];
    for d in 0..2 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(dim_err(op, format!("cannot broadcast {}x{} with {}x{}", a[0], a[1], b[0], b[1]))),
        };
    }
    Ok(out)
}

#[inline]
fn bidx(shape: [usize; 2], i: usize, j: usize) -> usize {
    let r = if shape[0] == 1 { 0 } else { i };
    let c = if shape[1] == 1 { 0 } else { j };
    r * shape[1] + c
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

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the first operation that produced a NaN or infinity, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.non_finite
    }

    /// Records a trainable input; its gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(dim_err("matmul", format!("{}x{} times {}x{}", ta.rows(), ta.cols(), tb.rows(), tb.cols())));
        }
        let value = ta.matmul(tb)?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push("matmul", value, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, ta.shape(), tb.shape())?;
        let (sa, sb) = (ta.shape(), tb.shape());
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                data.push(f(ta.data()[bidx(sa, i, j)], tb.data()[bidx(sb, i, j)]));
            }
        }
        let rg = self.tracked(a) || self.tracked(b);
        Ok((Tensor::from_vec(shape[0], shape[1], data)?, rg))
    }

    /// Elementwise sum with broadcasting over unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push("add", v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push("sub", v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push("mul", v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        let rg = self.tracked(a);
        self.push("scale", v, Op::Scale(a, factor), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| leaky_relu(x, slope));
        let rg = self.tracked(a);
        self.push("leaky_relu", v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(elu);
        let rg = self.tracked(a);
        self.push("elu", v, Op::Elu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.tracked(a);
        self.push("sigmoid", v, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let rg = self.tracked(a);
        self.push("exp", v, Op::Exp(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.tracked(a);
        self.push("sum", v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(dim_err("mean", "empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.tracked(a);
        Ok(self.push("mean", v, Op::Mean(a), rg))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_cols", "nothing to concatenate".into()));
        };
        let rows = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(dim_err("concat_cols", format!("row counts {} and {} differ", rows, t.rows())));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.tracked(p));
        let v = Tensor::from_vec(rows, total, data)?;
        Ok(self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Inverted dropout. In evaluation mode, or with `rate == 0`, the input
    /// handle is returned unchanged.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let v = Tensor::from_vec(t.rows(), t.cols(), data)?;
        let rg = self.tracked(a);
        Ok(self.push("dropout", v, Op::Dropout(a, mask), rg))
    }

    /// Row-wise softmax restricted to the `true` entries of a same-shaped mask.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(dim_err("masked_softmax", format!("{} logits, {} mask entries", t.len(), mask.len())));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = masked_softmax(t.row(r), &mask[r * cols..(r + 1) * cols])
                .map_err(|_| Error::EmptyNeighborhood { row: r })?;
            data.extend(row);
        }
        let v = Tensor::from_vec(t.rows(), cols, data)?;
        let rg = self.tracked(a);
        Ok(self.push("masked_softmax", v, Op::MaskedSoftmax(a), rg))
    }

    /// Picks entries of `a` (flat row-major positions) into a column vector.
    pub fn gather(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(dim_err("gather", format!("index {bad} out of range for {} entries", t.len())));
        }
        let v = Tensor::column(indices.iter().map(|&i| t.data()[i]).collect());
        let rg = self.tracked(a);
        Ok(self.push("gather", v, Op::Gather(a, indices), rg))
    }

    /// Softmax over contiguous segments of a column vector. Segment `s`
    /// spans `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 || offsets.last().copied() != Some(t.rows()) || offsets.first() != Some(&0) {
            return Err(dim_err("segment_softmax", format!("offsets do not cover a {}x{} column", t.rows(), t.cols())));
        }
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for (s, w) in offsets.windows(2).enumerate() {
            let (lo, hi) = (w[0], w[1]);
            if lo >= hi {
                return Err(Error::EmptyNeighborhood { row: s });
            }
            let max = x[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for p in lo..hi {
                out[p] = (x[p] - max).exp();
                total += out[p];
            }
            for o in &mut out[lo..hi] {
                *o /= total;
            }
        }
        let rg = self.tracked(a);
        Ok(self.push("segment_softmax", Tensor::column(out), Op::SegmentSoftmax(a, offsets), rg))
    }

    /// Weighted scatter of feature rows: `out[targets[p]] += weights[p] * features[sources[p]]`.
    pub fn aggregate(
        &mut self,
        weights: Var,
        features: Var,
        targets: Arc<[usize]>,
        sources: Arc<[usize]>,
        out_rows: usize,
    ) -> Result<Var> {
        let (w, f) = (self.value(weights), self.value(features));
        if w.cols() != 1 || w.rows() != targets.len() || targets.len() != sources.len() {
            return Err(dim_err(
                "aggregate",
                format!("{} weights, {} targets, {} sources", w.rows(), targets.len(), sources.len()),
            ));
        }
        if targets.iter().any(|&t| t >= out_rows) || sources.iter().any(|&s| s >= f.rows()) {
            return Err(dim_err("aggregate", "pair index out of range".into()));
        }
        let cols = f.cols();
        let mut out = Tensor::zeros(out_rows, cols);
        {
            let od = out.data_mut();
            for p in 0..targets.len() {
                let a = w.data()[p];
                let src = f.row(sources[p]);
                let dst = &mut od[targets[p] * cols..(targets[p] + 1) * cols];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        let rg = self.tracked(weights) || self.tracked(features);
        Ok(self.push("aggregate", out, Op::Aggregate { weights, features, targets, sources }, rg))
    }

    /// Mean softmax cross-entropy over the listed rows of a score matrix.
    pub fn softmax_cross_entropy(&mut self, logits: Var, rows: Arc<[usize]>, classes: Arc<[usize]>) -> Result<Var> {
        let t = self.value(logits);
        if rows.is_empty() || rows.len() != classes.len() {
            return Err(dim_err(
                "softmax_cross_entropy",
                format!("{} rows, {} class labels", rows.len(), classes.len()),
            ));
        }
        if rows.iter().any(|&r| r >= t.rows()) || classes.iter().any(|&c| c >= t.cols()) {
            return Err(dim_err("softmax_cross_entropy", "row or class out of range".into()));
        }
        let mut total = 0.0;
        for (&r, &c) in rows.iter().zip(classes.iter()) {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[c];
        }
        let v = Tensor::scalar(total / rows.len() as f64);
        let rg = self.tracked(logits);
        Ok(self.push("softmax_cross_entropy", v, Op::SoftmaxCrossEntropy { logits, rows, classes }, rg))
    }

    /// Mean sigmoid binary cross-entropy over the listed rows and every
    /// column. `targets` holds `rows.len() * cols` values in {0, 1}.
    pub fn sigmoid_cross_entropy(&mut self, logits: Var, rows: Arc<[usize]>, targets: Arc<[f64]>) -> Result<Var> {
        let t = self.value(logits);
        let cols = t.cols();
        if rows.is_empty() || targets.len() != rows.len() * cols {
            return Err(dim_err(
                "sigmoid_cross_entropy",
                format!("{} rows with {} columns, {} targets", rows.len(), cols, targets.len()),
            ));
        }
        if rows.iter().any(|&r| r >= t.rows()) {
            return Err(dim_err("sigmoid_cross_entropy", "row out of range".into()));
        }
        let mut total = 0.0;
        for (k, &r) in rows.iter().enumerate() {
            for (j, &x) in t.row(r).iter().enumerate() {
                let y = targets[k * cols + j];
                total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            }
        }
        let v = Tensor::scalar(total / (rows.len() * cols) as f64);
        let rg = self.tracked(logits);
        Ok(self.push("sigmoid_cross_entropy", v, Op::SigmoidCrossEntropy { logits, rows, targets }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if let Some(op) = self.non_finite {
            return Err(Error::NonFinite { op });
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::Usage("backward needs a 1x1 loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot => *slot = Some(contribution),
        }
    }

    /// Adds `g` (already in the input's own shape) using a per-entry map.
    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, fill: impl FnOnce(&mut [f64])) {
        if !self.tracked(v) {
            return;
        }
        let [r, c] = self.shape(v);
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c));
        fill(slot.data_mut());
    }

    fn broadcast_back(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, factor: impl Fn(usize, usize) -> f64) {
        let shape = self.shape(v);
        let [r, c] = g.shape();
        self.accumulate_with(grads, v, |d| {
            for i in 0..r {
                for j in 0..c {
                    d[bidx(shape, i, j)] += g.data()[i * c + j] * factor(i, j);
                }
            }
        });
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    matmul_a_bt_into(ga.data_mut(), g.data(), g.shape(), tb.data(), tb.shape());
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    matmul_at_b_into(gb.data_mut(), ta.data(), ta.shape(), g.data(), g.shape());
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.broadcast_back(grads, *a, g, |_, _| 1.0);
                self.broadcast_back(grads, *b, g, |_, _| 1.0);
            }
            Op::Sub(a, b) => {
                self.broadcast_back(grads, *a, g, |_, _| 1.0);
                self.broadcast_back(grads, *b, g, |_, _| -1.0);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (sa, sb) = (ta.shape(), tb.shape());
                self.broadcast_back(grads, *a, g, |i, j| tb.data()[bidx(sb, i, j)]);
                self.broadcast_back(grads, *b, g, |i, j| ta.data()[bidx(sa, i, j)]);
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.elementwise_back(grads, *a, g, |k| if x.data()[k] > 0.0 { 1.0 } else { *slope });
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                self.elementwise_back(grads, *a, g, |k| if x.data()[k] > 0.0 { 1.0 } else { out.data()[k] + 1.0 });
            }
            Op::Sigmoid(a) => {
                self.elementwise_back(grads, *a, g, |k| {
                    let s = out.data()[k];
                    s * (1.0 - s)
                });
            }
            Op::Exp(a) => self.elementwise_back(grads, *a, g, |k| out.data()[k]),
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.accumulate_with(grads, p, |d| {
                        for i in 0..rows {
                            let src = &g.data()[i * total + offset..i * total + offset + w];
                            for (dst, s) in d[i * w..(i + 1) * w].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Dropout(a, mask) => self.elementwise_back(grads, *a, g, |k| mask[k]),
            Op::MaskedSoftmax(a) => {
                let cols = out.cols();
                self.accumulate_with(grads, *a, |d| {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            d[r * cols + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Gather(a, indices) => {
                self.accumulate_with(grads, *a, |d| {
                    for (p, &i) in indices.iter().enumerate() {
                        d[i] += g.data()[p];
                    }
                });
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = out.data();
                self.accumulate_with(grads, *a, |d| {
                    for w in offsets.windows(2) {
                        let (lo, hi) = (w[0], w[1]);
                        let dot: f64 = (lo..hi).map(|p| y[p] * g.data()[p]).sum();
                        for p in lo..hi {
                            d[p] += y[p] * (g.data()[p] - dot);
                        }
                    }
                });
            }
            Op::Aggregate { weights, features, targets, sources } => {
                let (w, f) = (self.value(*weights), self.value(*features));
                let cols = f.cols();
                self.accumulate_with(grads, *weights, |d| {
                    for p in 0..targets.len() {
                        let gr = &g.data()[targets[p] * cols..(targets[p] + 1) * cols];
                        d[p] += gr.iter().zip(f.row(sources[p])).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                self.accumulate_with(grads, *features, |d| {
                    for p in 0..targets.len() {
                        let a = w.data()[p];
                        let gr = &g.data()[targets[p] * cols..(targets[p] + 1) * cols];
                        for (dst, s) in d[sources[p] * cols..(sources[p] + 1) * cols].iter_mut().zip(gr) {
                            *dst += a * s;
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, rows, classes } => {
                let t = self.value(*logits);
                let cols = t.cols();
                let scale = g.item() / rows.len() as f64;
                self.accumulate_with(grads, *logits, |d| {
                    for (&r, &c) in rows.iter().zip(classes.iter()) {
                        let row = t.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..cols {
                            let p = (row[j] - max).exp() / total;
                            let y = if j == c { 1.0 } else { 0.0 };
                            d[r * cols + j] += scale * (p - y);
                        }
                    }
                });
            }
            Op::SigmoidCrossEntropy { logits, rows, targets } => {
                let t = self.value(*logits);
                let cols = t.cols();
                let scale = g.item() / (rows.len() * cols) as f64;
                self.accumulate_with(grads, *logits, |d| {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..cols {
                            let x = t.get(r, j);
                            d[r * cols + j] += scale * (sigmoid(x) - targets[k * cols + j]);
                        }
                    }
                });
            }
        }
    }

    fn elementwise_back(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, local: impl Fn(usize) -> f64) {
        self.accumulate_with(grads, v, |d| {
            for (k, dst) in d.iter_mut().enumerate() {
                *dst += g.data()[k] * local(k);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 2.0);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn same_input_twice_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn broadcast_row_and_column() {
        let mut tape = Tape::new();
        let col = tape.leaf(Tensor::column(vec![1.0, 2.0]));
        let row = tape.leaf(Tensor::from_rows(&[[10.0, 20.0, 30.0]]).unwrap());
        let grid = tape.add(col, row).unwrap();
        assert_eq!(tape.shape(grid), [2, 3]);
        assert_eq!(tape.value(grid).data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
        let s = tape.sum(grid);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(col).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(g.get(row).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_blocks_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1000.0));
        let y = tape.exp(x);
        let y = tape.exp(y);
        assert_eq!(tape.non_finite(), Some("exp"));
        assert!(matches!(tape.backward(y), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(4, 4, 1.5));
        assert_eq!(tape.dropout(x, 0.0, 1, true).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, 1, false).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, 1, true), Err(Error::Config(_))));
        assert!(matches!(tape.dropout(x, -0.1, 1, true), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_statistics() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(100, 100, 1.0));
        let y = tape.dropout(x, 0.5, 42, true).unwrap();
        let v = tape.value(y).clone();
        let survivors = v.data().iter().filter(|&&d| d != 0.0).count() as f64 / 10_000.0;
        assert!((survivors - 0.5).abs() <= 0.02, "survivor fraction {survivors}");
        let mean = v.sum() / 10_000.0;
        assert!((mean - 1.0).abs() <= 0.03, "mean {mean}");
        // mask is reused by the backward pass
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), v.data());
    }

    #[test]
    fn segment_softmax_rejects_empty_segment() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::column(vec![1.0, 2.0]));
        let err = tape.segment_softmax(x, Arc::from(vec![0, 2, 2])).unwrap_err();
        assert!(matches!(err, Error::EmptyNeighborhood { row: 1 }));
    }

    #[test]
    fn uniform_cross_entropy_is_log_classes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(3, 5));
        let l = tape.softmax_cross_entropy(x, Arc::from(vec![0, 1, 2]), Arc::from(vec![0, 3, 4])).unwrap();
        assert!((tape.item(l) - 5f64.ln()).abs() < 1e-14);
    }
}
