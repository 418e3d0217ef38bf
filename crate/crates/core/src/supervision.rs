//! Ground-truth attention targets, balanced pair sampling and the attention
//! MSE loss.
//!
//! The supervised pair set is every near pair (hop value below `max_hv`,
//! self pairs included) plus a fresh random subset of far pairs per batch.
//! Ordered pairs are supervised separately because logits are directional.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::PairList;
use crate::error::{config_err, Error, Result};
use crate::graph::HopMatrix;
use crate::tensor::{Tape, Tensor, Var};

/// Target logit for a pair at hop value `hv`.
pub fn ground_truth(hv: usize, max_hv: usize) -> f64 {
    if hv == 0 {
        1.0
    } else if hv < max_hv {
        1.0 - hv as f64
    } else {
        1.0 - max_hv as f64
    }
}

/// One batch worth of supervised pairs.
#[derive(Clone, Debug)]
pub struct PairSample {
    /// Near pairs first (row-major order), then the sampled far pairs
    /// (row-major order).
    pub pairs: PairList,
    /// `ground_truth` of every pair, as an `P x 1` column.
    pub targets: Tensor,
    pub near: usize,
    pub far: usize,
}

impl PairSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Near-pair enumeration cached once per graph, far pairs drawn per batch.
#[derive(Clone, Debug)]
pub struct PairSampler {
    near: Vec<(usize, usize)>,
    far_total: usize,
    ratio: f64,
}

impl PairSampler {
    pub fn new(hops: &HopMatrix, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(config_err(format!("sample ratio {ratio} outside (0, 1]")));
        }
        let n = hops.num_nodes();
        let cap = hops.max_hv() as u8;
        let mut near = Vec::new();
        for i in 0..n {
            near.extend(hops.row(i).iter().enumerate().filter(|(_, &v)| v < cap).map(|(j, _)| (i, j)));
        }
        let far_total = n * n - near.len();
        Ok(Self { near, far_total, ratio })
    }

    pub fn near_count(&self) -> usize {
        self.near.len()
    }

    pub fn far_total(&self) -> usize {
        self.far_total
    }

    /// `round(r * far_total)`.
    pub fn far_sample_size(&self) -> usize {
        ((self.ratio * self.far_total as f64).round() as usize).min(self.far_total)
    }

    pub fn sample(&self, hops: &HopMatrix, seed: u64) -> PairSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let far = self.sample_far(hops, &mut rng);
        let max_hv = hops.max_hv();
        let mut pairs = self.near.clone();
        pairs.extend(far.iter().copied());
        let list = PairList::new(&pairs, hops);
        let targets = targets_for(&list, max_hv);
        PairSample { pairs: list, targets, near: self.near.len(), far: far.len() }
    }

    fn sample_far(&self, hops: &HopMatrix, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        let m = self.far_sample_size();
        let n = hops.num_nodes();
        if m == 0 {
            return Vec::new();
        }
        if 2 * self.far_total >= n * n && m < self.far_total {
            // far pairs dominate: rejection sampling accepts at least half the draws
            let mut chosen = BTreeSet::new();
            while chosen.len() < m {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                if hops.is_saturated(i, j) {
                    chosen.insert((i, j));
                }
            }
            return chosen.into_iter().collect();
        }
        let all: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| hops.is_saturated(i, j)).collect();
        let mut picked = index::sample(rng, all.len(), m).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| all[k]).collect()
    }
}

/// Convenience wrapper building a sampler and drawing one sample.
pub fn sample_pairs(hops: &HopMatrix, ratio: f64, seed: u64) -> Result<PairSample> {
    Ok(PairSampler::new(hops, ratio)?.sample(hops, seed))
}

/// Mean squared error between every head's raw logits and the targets,
/// divided by `heads * pairs`.
pub fn attention_loss(tape: &mut Tape, logits: &[Var], targets: &Tensor) -> Result<Var> {
    if logits.is_empty() || targets.is_empty() {
        return Err(Error::Usage("attention loss needs at least one head and one pair".into()));
    }
    let t = tape.constant(targets.clone());
    let mut total: Option<Var> = None;
    for &e in logits {
        if tape.shape(e) != targets.shape() {
            return Err(Error::Dimension {
                op: "attention_loss",
                detail: format!("logits {:?} vs targets {:?}", tape.shape(e), targets.shape()),
            });
        }
        let d = tape.sub(e, t)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let denom = (logits.len() * targets.len()) as f64;
    Ok(tape.scale(total.expect("non-empty"), 1.0 / denom))
}

/// Plain-value version of [`attention_loss`].
pub fn attention_loss_value(logits: &[&[f64]], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for head in logits {
        total += head.iter().zip(targets).map(|(e, g)| (e - g).powi(2)).sum::<f64>();
    }
    total / (logits.len() * targets.len()) as f64
}

/// Target column for an arbitrary pair list.
pub fn targets_for(pairs: &PairList, max_hv: usize) -> Tensor {
    Tensor::column(pairs.hops.iter().map(|&hv| ground_truth(hv, max_hv)).collect())
}
