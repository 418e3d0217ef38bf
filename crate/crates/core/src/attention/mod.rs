//! Graph attention layers: the baseline GAT score and the two hop-aware
//! scores (product and addition), multi-head stacking and checkpoints.
//!
//! Attention logits are evaluated on explicit pair lists rather than dense
//! `N x N` grids. Each layer scores its aggregation neighbourhood (softmaxed
//! per centre node) plus an optional list of query pairs whose raw logits
//! feed the attention supervision loss without touching the forward output.

mod layer;
mod model;

pub use layer::{pair_logit_value, pair_logits};
pub use model::{Checkpoint, ForwardOutput, HeadAttention, HopGat, CHECKPOINT_VERSION};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::graph::{Graph, HopMatrix};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// `LeakyReLU(a_c(Wh_i) + a_n(Wh_j))` over hop <= 1 plus self.
    Baseline,
    /// `a_c(Wh_i) * (a_n(Wh_j) + a_he(he[hv_ij]))`.
    Product,
    /// `LeakyReLU(a_he(he[hv_ij]) * (a_c(Wh_i) + a_n(Wh_j)))`.
    Addition,
}

impl AttentionKind {
    pub fn uses_hops(self) -> bool {
        !matches!(self, AttentionKind::Baseline)
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "gat" => Ok(Self::Baseline),
            "product" => Ok(Self::Product),
            "addition" => Ok(Self::Addition),
            other => Err(config_err(format!("unknown attention kind `{other}`"))),
        }
    }
}

/// Shape and regularisation of one attention layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub in_dim: usize,
    /// Per-head output width.
    pub out_dim: usize,
    pub heads: usize,
    pub kind: AttentionKind,
    /// Final layers average their heads; hidden layers concatenate them.
    pub final_layer: bool,
    /// Dropout on the layer input, on attention coefficients and on the
    /// transformed features, in that order.
    pub dropout: [f64; 3],
    pub leaky_slope: f64,
}

impl LayerConfig {
    pub fn output_width(&self) -> usize {
        if self.final_layer {
            self.out_dim
        } else {
            self.out_dim * self.heads
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(config_err("layer dims and head count must be >= 1"));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(config_err(format!("dropout rate {r} outside [0, 1)")));
        }
        if !self.leaky_slope.is_finite() {
            return Err(config_err("leaky slope must be finite"));
        }
        Ok(())
    }
}

/// A full stack of attention layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub max_hv: usize,
    pub layers: Vec<LayerConfig>,
}

impl ModelConfig {
    /// Chains layers from per-layer head counts and widths; the last layer
    /// is the averaging output layer.
    pub fn stacked(
        kind: AttentionKind,
        max_hv: usize,
        input_dim: usize,
        heads: &[usize],
        widths: &[usize],
        dropout: [f64; 3],
        leaky_slope: f64,
    ) -> Result<Self> {
        if heads.is_empty() || heads.len() != widths.len() {
            return Err(config_err(format!("{} head counts for {} layer widths", heads.len(), widths.len())));
        }
        let mut layers = Vec::with_capacity(heads.len());
        let mut in_dim = input_dim;
        for (l, (&h, &w)) in heads.iter().zip(widths).enumerate() {
            let layer = LayerConfig {
                in_dim,
                out_dim: w,
                heads: h,
                kind,
                final_layer: l + 1 == heads.len(),
                dropout,
                leaky_slope,
            };
            in_dim = layer.output_width();
            layers.push(layer);
        }
        let cfg = Self { max_hv, layers };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> AttentionKind {
        self.layers[0].kind
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, LayerConfig::output_width)
    }

    /// Skip connections are used when the stack is deeper than two layers.
    pub fn uses_skip(&self) -> bool {
        self.layers.len() > 2
    }

    pub fn total_heads(&self) -> usize {
        self.layers.iter().map(|l| l.heads).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(config_err("model needs at least one layer"));
        };
        if self.max_hv < 2 || self.max_hv > u8::MAX as usize {
            return Err(config_err(format!("max_hv {} outside 2..=255", self.max_hv)));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.kind != first.kind {
                return Err(config_err("all layers must share one attention kind"));
            }
            if layer.final_layer != (l + 1 == self.layers.len()) {
                return Err(config_err("only the last layer may average its heads"));
            }
            if l > 0 && layer.in_dim != self.layers[l - 1].output_width() {
                return Err(config_err(format!(
                    "layer {l} expects {} inputs but layer {} emits {}",
                    layer.in_dim,
                    l - 1,
                    self.layers[l - 1].output_width()
                )));
            }
        }
        Ok(())
    }
}

/// Directed node pairs `(center, neighbor)` with their saturated hop values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairList {
    pub centers: Arc<[usize]>,
    pub neighbors: Arc<[usize]>,
    pub hops: Arc<[usize]>,
}

impl PairList {
    pub fn new(pairs: &[(usize, usize)], hops: &HopMatrix) -> Self {
        Self {
            centers: pairs.iter().map(|p| p.0).collect(),
            neighbors: pairs.iter().map(|p| p.1).collect(),
            hops: pairs.iter().map(|&(i, j)| hops.get(i, j)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).map(|p| (self.centers[p], self.neighbors[p], self.hops[p]))
    }
}

/// Aggregation neighbourhoods, grouped contiguously by centre node.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub pairs: PairList,
    /// Centre `i` owns pairs `offsets[i]..offsets[i + 1]`.
    pub offsets: Arc<[usize]>,
}

impl Neighborhood {
    /// Pairs with hop value `< limit`; every node keeps its self pair.
    pub fn within(hops: &HopMatrix, limit: usize) -> Self {
        let n = hops.num_nodes();
        let mut pairs = Vec::new();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            for (j, &hv) in hops.row(i).iter().enumerate() {
                if (hv as usize) < limit {
                    pairs.push((i, j));
                }
            }
            offsets.push(pairs.len());
        }
        Self { pairs: PairList::new(&pairs, hops), offsets: offsets.into() }
    }

    /// Neighbourhood used by `kind`: hop <= 1 for the baseline, hop below
    /// `max_hv` for the hop-aware kinds.
    pub fn for_kind(kind: AttentionKind, hops: &HopMatrix) -> Self {
        match kind {
            AttentionKind::Baseline => Self::within(hops, 2),
            _ => Self::within(hops, hops.max_hv()),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Everything a forward pass needs about one graph.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub features: Tensor,
    pub hops: HopMatrix,
    pub neighborhood: Neighborhood,
}

impl GraphInput {
    pub fn new(graph: &Graph, hops: HopMatrix, kind: AttentionKind) -> Self {
        let neighborhood = Neighborhood::for_kind(kind, &hops);
        Self { features: graph.features().clone(), hops, neighborhood }
    }

    pub fn num_nodes(&self) -> usize {
        self.hops.num_nodes()
    }
}
