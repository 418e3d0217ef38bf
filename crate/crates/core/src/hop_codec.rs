//! Sinusoidal hop-value encodings.
//!
//! Row `v` of a table encodes hop value `v`: the first `d/2` columns hold
//! `sin(v * inv_i)` and the last `d/2` hold `cos(v * inv_i)`, where the
//! frequencies `inv_i = exp(-i * ln(max_hv) / max(d/2 - 1, 1))` for
//! `i in 0..d/2` are shared by both halves. Sharing frequencies makes the
//! encoding at `v + p` a fixed rotation of the encoding at `v`.

use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct HopEncodingTable {
    dim: usize,
    max_hv: usize,
    rows: Tensor,
}

/// Frequencies `inv_i` for `i in 0..dim/2`.
pub fn frequencies(dim: usize, max_hv: usize) -> Vec<f64> {
    let half = dim / 2;
    let denom = (half.saturating_sub(1)).max(1) as f64;
    let step = -(max_hv as f64).ln() / denom;
    (0..half).map(|i| (i as f64 * step).exp()).collect()
}

impl HopEncodingTable {
    /// Builds the `(max_hv + 1) x dim` table.
    pub fn build(dim: usize, max_hv: usize) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(config_err(format!("hop encoding width {dim} must be even and >= 2")));
        }
        if max_hv < 2 {
            return Err(config_err(format!("max_hv {max_hv} must be >= 2")));
        }
        let half = dim / 2;
        let inv = frequencies(dim, max_hv);
        let mut rows = Tensor::zeros(max_hv + 1, dim);
        for hv in 0..=max_hv {
            for (i, f) in inv.iter().enumerate() {
                let angle = hv as f64 * f;
                rows.set(hv, i, angle.sin());
                rows.set(hv, i + half, angle.cos());
            }
        }
        Ok(Self { dim, max_hv, rows })
    }

    /// Table for a layer of width `width`; odd widths are rounded up to the
    /// next even number.
    pub fn for_layer(width: usize, max_hv: usize) -> Result<Self> {
        Self::build((width + width % 2).max(2), max_hv)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_hv(&self) -> usize {
        self.max_hv
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    /// Encoding of hop value `hv`. Saturated distances must already be
    /// clamped to `max_hv`.
    pub fn lookup(&self, hv: usize) -> Result<&[f64]> {
        if hv > self.max_hv {
            return Err(Error::Usage(format!("hop value {hv} exceeds max_hv {}; saturate it first", self.max_hv)));
        }
        Ok(self.rows.row(hv))
    }
}
