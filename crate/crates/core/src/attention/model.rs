use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pair_logits, GraphInput, LayerConfig, ModelConfig, PairList};
use crate::error::{config_err, Error, Result};
use crate::hop_codec::HopEncodingTable;
use crate::tensor::{ParamSet, Tape, Tensor, Var};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
struct HeadSlots {
    weight: usize,
    center: (usize, usize),
    neighbor: (usize, usize),
    hop: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
enum SkipSlot {
    None,
    Identity,
    Projection(usize, usize),
}

#[derive(Clone, Debug)]
struct LayerSlots {
    heads: Vec<HeadSlots>,
    skip: SkipSlot,
}

/// Attention quantities of one head, as tape handles.
#[derive(Clone, Debug)]
pub struct HeadAttention {
    /// Raw logits over the aggregation neighbourhood, `P x 1`.
    pub logits: Var,
    /// Softmax-normalised coefficients over the neighbourhood (before
    /// attention dropout), `P x 1`.
    pub alpha: Var,
    /// Raw logits of the requested query pairs, when any were requested.
    pub query_logits: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `N x C` scores, before the task softmax or sigmoid.
    pub scores: Var,
    /// Output of every layer after its activation; the last entry is `scores`.
    pub layers: Vec<Var>,
    /// `attention[layer][head]`.
    pub attention: Vec<Vec<HeadAttention>>,
}

impl ForwardOutput {
    /// Query logits of every head in every layer, layer-major.
    pub fn query_logits(&self) -> Vec<Var> {
        self.attention.iter().flatten().filter_map(|h| h.query_logits).collect()
    }
}

/// A multi-layer graph attention network (baseline or hop-aware).
#[derive(Clone, Debug)]
pub struct HopGat {
    config: ModelConfig,
    params: ParamSet,
    slots: Vec<LayerSlots>,
    tables: Vec<Option<HopEncodingTable>>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, || rng.random_range(-limit..limit))
}

impl HopGat {
    /// Builds a model with Glorot-uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(
            config,
            |rows, cols, is_weight| {
                if is_weight {
                    glorot(&mut rng, rows, cols)
                } else {
                    Tensor::zeros(rows, cols)
                }
            },
        )
    }

    fn build(config: ModelConfig, mut init: impl FnMut(usize, usize, bool) -> Tensor) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut slots = Vec::with_capacity(config.layers.len());
        let mut tables = Vec::with_capacity(config.layers.len());
        let kind = config.kind();
        for (l, layer) in config.layers.iter().enumerate() {
            let table =
                if kind.uses_hops() { Some(HopEncodingTable::for_layer(layer.out_dim, config.max_hv)?) } else { None };
            let mut heads = Vec::with_capacity(layer.heads);
            for k in 0..layer.heads {
                let name = |role: &str| format!("layer{l}.head{k}.{role}");
                let weight = params.push(name("weight"), init(layer.in_dim, layer.out_dim, true), true);
                let mut scorer = |role: &str, width: usize| {
                    let w = params.push(name(&format!("{role}.w")), init(width, 1, true), true);
                    let b = params.push(name(&format!("{role}.b")), init(1, 1, false), false);
                    (w, b)
                };
                let center = scorer("center", layer.out_dim);
                let neighbor = scorer("neighbor", layer.out_dim);
                let hop = table.as_ref().map(|t| scorer("hop", t.dim()));
                heads.push(HeadSlots { weight, center, neighbor, hop });
            }
            let skip = if l == 0 || !config.uses_skip() {
                SkipSlot::None
            } else if layer.in_dim == layer.output_width() {
                SkipSlot::Identity
            } else {
                let w = params.push(format!("layer{l}.skip.w"), init(layer.in_dim, layer.output_width(), true), true);
                let b = params.push(format!("layer{l}.skip.b"), init(1, layer.output_width(), false), false);
                SkipSlot::Projection(w, b)
            };
            slots.push(LayerSlots { heads, skip });
            tables.push(table);
        }
        Ok(Self { config, params, slots, tables })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn hop_table(&self, layer: usize) -> Option<&HopEncodingTable> {
        self.tables.get(layer).and_then(Option::as_ref)
    }

    /// Sets every attention scorer (weights and biases) to zero, which makes
    /// all logits zero and every neighbourhood softmax uniform.
    pub fn zero_scorers(&mut self) {
        for layer in &self.slots {
            for h in &layer.heads {
                let mut slots = vec![h.center.0, h.center.1, h.neighbor.0, h.neighbor.1];
                if let Some((w, b)) = h.hop {
                    slots.extend([w, b]);
                }
                for s in slots {
                    let p = self.params.get_mut(s);
                    p.value = Tensor::zeros(p.value.rows(), p.value.cols());
                }
            }
        }
    }

    /// Zeroes only the hop scorers `a_he`.
    pub fn zero_hop_scorers(&mut self) {
        for layer in &self.slots {
            for h in &layer.heads {
                if let Some((w, b)) = h.hop {
                    for s in [w, b] {
                        let p = self.params.get_mut(s);
                        p.value = Tensor::zeros(p.value.rows(), p.value.cols());
                    }
                }
            }
        }
    }

    /// Runs the stack over one graph.
    ///
    /// `vars` must come from `self.params().bind(tape)`. Dropout masks are
    /// seeded from `rng` in a fixed order, only when `training` is set.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: &GraphInput,
        query: Option<&PairList>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutput> {
        if vars.len() != self.params.len() {
            return Err(Error::Usage("parameter handles do not match this model".into()));
        }
        if input.features.cols() != self.config.input_dim() {
            return Err(config_err(format!(
                "model expects {} input features, graph has {}",
                self.config.input_dim(),
                input.features.cols()
            )));
        }
        if input.hops.max_hv() != self.config.max_hv {
            return Err(config_err(format!(
                "hop matrix saturates at {}, model uses max_hv {}",
                input.hops.max_hv(),
                self.config.max_hv
            )));
        }
        let n = input.num_nodes();
        let mut x = tape.constant(input.features.clone());
        let mut attention = Vec::with_capacity(self.config.layers.len());
        let mut layers = Vec::with_capacity(self.config.layers.len());
        for (l, layer) in self.config.layers.iter().enumerate() {
            let slots = &self.slots[l];
            let hop_rows = self.tables[l].as_ref().map(|t| tape.constant(t.rows().clone()));
            let mut outputs = Vec::with_capacity(layer.heads);
            let mut heads = Vec::with_capacity(layer.heads);
            for h in &slots.heads {
                let (out, att) =
                    self.head_forward(tape, vars, layer, h, x, hop_rows, input, query, training, rng, n)?;
                outputs.push(out);
                heads.push(att);
            }
            let skip = match slots.skip {
                SkipSlot::None => None,
                SkipSlot::Identity => Some(x),
                SkipSlot::Projection(w, b) => {
                    let p = tape.matmul(x, vars[w])?;
                    Some(tape.add(p, vars[b])?)
                }
            };
            x = if layer.final_layer {
                let mut acc = outputs[0];
                for &o in &outputs[1..] {
                    acc = tape.add(acc, o)?;
                }
                let mut mean = tape.scale(acc, 1.0 / layer.heads as f64);
                if let Some(s) = skip {
                    mean = tape.add(mean, s)?;
                }
                mean
            } else {
                let mut cat = tape.concat_cols(&outputs)?;
                if let Some(s) = skip {
                    cat = tape.add(cat, s)?;
                }
                tape.elu(cat)
            };
            attention.push(heads);
            layers.push(x);
        }
        Ok(ForwardOutput { scores: x, layers, attention })
    }

    #[allow(clippy::too_many_arguments)]
    fn head_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        layer: &LayerConfig,
        h: &HeadSlots,
        x: Var,
        hop_rows: Option<Var>,
        input: &GraphInput,
        query: Option<&PairList>,
        training: bool,
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> Result<(Var, HeadAttention)> {
        let [dp_in, dp_att, dp_feat] = layer.dropout;
        let mut seed = || if training { rng.random::<u64>() } else { 0 };
        let (s_in, s_att, s_feat) = (seed(), seed(), seed());

        let x_in = tape.dropout(x, dp_in, s_in, training)?;
        let wh = tape.matmul(x_in, vars[h.weight])?;
        let center = tape.matmul(wh, vars[h.center.0])?;
        let center = tape.add(center, vars[h.center.1])?;
        let neighbor = tape.matmul(wh, vars[h.neighbor.0])?;
        let neighbor = tape.add(neighbor, vars[h.neighbor.1])?;
        let hop = match (h.hop, hop_rows) {
            (Some((w, b)), Some(rows)) => {
                let s = tape.matmul(rows, vars[w])?;
                Some(tape.add(s, vars[b])?)
            }
            _ => None,
        };

        let nb = &input.neighborhood;
        let logits = pair_logits(tape, layer.kind, &nb.pairs, center, neighbor, hop, layer.leaky_slope)?;
        let alpha = tape.segment_softmax(logits, nb.offsets.clone())?;
        let alpha_d = tape.dropout(alpha, dp_att, s_att, training)?;
        let wh_d = tape.dropout(wh, dp_feat, s_feat, training)?;
        let out = tape.aggregate(alpha_d, wh_d, nb.pairs.centers.clone(), nb.pairs.neighbors.clone(), n)?;

        let query_logits = match query {
            Some(q) if !q.is_empty() => {
                Some(pair_logits(tape, layer.kind, q, center, neighbor, hop, layer.leaky_slope)?)
            }
            _ => None,
        };
        Ok((out, HeadAttention { logits, alpha, query_logits }))
    }

    /// `sum ||W||^2` over every weight matrix (biases excluded).
    pub fn l2_penalty(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (p, &v) in self.params.iter().zip(vars) {
            if !p.decay {
                continue;
            }
            let sq = tape.mul(v, v)?;
            let s = tape.sum(sq);
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        Ok(match total {
            Some(t) => t,
            None => tape.constant(Tensor::scalar(0.0)),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(config_err(format!("unsupported checkpoint version {}", ckpt.format_version)));
        }
        let mut model = Self::build(ckpt.config.clone(), |r, c, _| Tensor::zeros(r, c))?;
        if model.params.len() != ckpt.params.len() {
            return Err(config_err(format!(
                "checkpoint holds {} tensors, model needs {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for k in 0..model.params.len() {
            let p = model.params.get_mut(k);
            let stored =
                ckpt.params.get(&p.name).ok_or_else(|| config_err(format!("checkpoint lacks `{}`", p.name)))?;
            if stored.shape() != p.value.shape() {
                return Err(config_err(format!("checkpoint tensor `{}` has the wrong shape", p.name)));
            }
            p.value = stored.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Serialised model: configuration plus every parameter tensor keyed by
/// `layer{l}.head{k}.{role}` (or `layer{l}.skip.{w,b}`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
