//! Dense float64 tensors, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Every tensor is a row-major matrix. Vectors are `n x 1` columns and
//! scalars are `1 x 1`; that covers every quantity the attention layers need.

mod adam;
pub mod gradcheck;
mod tape;

pub use adam::{AdamConfig, AdamState, Param, ParamSet};
pub use tape::{Gradients, Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { shape: [rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { shape: [rows, cols], data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: [1, 1], data: vec![value] }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self { shape: [values.len(), 1], data: values }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension {
                op: "from_vec",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { shape: [rows, cols], data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    detail: format!("row {i} has {} columns, expected {cols}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { shape: [rows.len(), cols], data })
    }

    /// Matrix with entries drawn from `sample`, in row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut sample: impl FnMut() -> f64) -> Self {
        Self { shape: [rows, cols], data: (0..rows * cols).map(|_| sample()).collect() }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape[1] + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.shape[1];
        self.data[row * cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[row * c..(row + 1) * c]
    }

    /// Value of a `1 x 1` tensor (or the first entry of any tensor).
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Tensor {
        let [r, c] = self.shape;
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Plain matrix product, outside any tape.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::Dimension {
                op: "matmul",
                detail: format!("{}x{} times {}x{}", self.rows(), self.cols(), other.rows(), other.cols()),
            });
        }
        let mut out = Tensor::zeros(self.rows(), other.cols());
        matmul_into(&mut out.data, &self.data, self.shape, &other.data, other.shape);
        Ok(out)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `out += a * b`. Zero entries of `a` are skipped, which pays off for
/// bag-of-words feature matrices.
pub(crate) fn matmul_into(out: &mut [f64], a: &[f64], a_shape: [usize; 2], b: &[f64], b_shape: [usize; 2]) {
    let [m, k] = a_shape;
    let n = b_shape[1];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ * b` for `a: k x m`, `b: k x n`.
pub(crate) fn matmul_at_b_into(out: &mut [f64], a: &[f64], a_shape: [usize; 2], b: &[f64], b_shape: [usize; 2]) {
    let [k, m] = a_shape;
    let n = b_shape[1];
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a * bᵀ` for `a: m x n`, `b: k x n`.
pub(crate) fn matmul_a_bt_into(out: &mut [f64], a: &[f64], a_shape: [usize; 2], b: &[f64], b_shape: [usize; 2]) {
    let [m, n] = a_shape;
    let k = b_shape[0];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// Softmax over the `true` positions of `mask`; masked positions are exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Dimension {
            op: "masked_softmax",
            detail: format!("{} logits, {} mask entries", logits.len(), mask.len()),
        });
    }
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyNeighborhood { row: 0 });
    }
    let mut out: Vec<f64> = logits.iter().zip(mask).map(|(&v, &m)| if m { (v - max).exp() } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
