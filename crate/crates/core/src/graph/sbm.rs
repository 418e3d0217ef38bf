use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, Labels, Splits};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Stochastic block model with planted features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    /// Edge probability inside a block.
    pub p_in: f64,
    /// Edge probability across blocks.
    pub p_out: f64,
    /// Standard deviation of the Gaussian noise added to the one-hot block
    /// signature features.
    pub feature_noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    /// The desk-scale fixture: 2 blocks of 150 nodes.
    fn default() -> Self {
        Self {
            blocks: 2,
            nodes_per_block: 150,
            p_in: 0.05,
            p_out: 0.002,
            feature_noise: 1.0,
            train_fraction: 0.4,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    if cfg.blocks < 2 || cfg.nodes_per_block < 2 {
        return Err(config_err("SBM needs at least 2 blocks of at least 2 nodes"));
    }
    let prob = 0.0..=1.0;
    if !prob.contains(&cfg.p_in) || !prob.contains(&cfg.p_out) || cfg.p_in <= cfg.p_out {
        return Err(config_err(format!("SBM needs 0 <= p_out < p_in <= 1, got p_in={} p_out={}", cfg.p_in, cfg.p_out)));
    }
    if !(cfg.feature_noise >= 0.0 && cfg.feature_noise.is_finite()) {
        return Err(config_err("feature noise must be finite and non-negative"));
    }
    if !(cfg.train_fraction > 0.0 && cfg.val_fraction >= 0.0 && cfg.train_fraction + cfg.val_fraction < 1.0) {
        return Err(config_err("split fractions must leave a non-empty test set"));
    }

    let n = cfg.blocks * cfg.nodes_per_block;
    let block_of = |i: usize| i / cfg.nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block_of(i) == block_of(j) { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let noise = Normal::new(0.0, cfg.feature_noise).map_err(|e| config_err(e.to_string()))?;
    let mut features = Tensor::zeros(n, cfg.blocks);
    for i in 0..n {
        for b in 0..cfg.blocks {
            let signal = if block_of(i) == b { 1.0 } else { 0.0 };
            let jitter = if cfg.feature_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            features.set(i, b, signal + jitter);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((cfg.train_fraction * n as f64).round() as usize).max(1);
    let n_val = (cfg.val_fraction * n as f64).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Graph::new(
        n,
        edges,
        features,
        Labels::Single { num_classes: cfg.blocks, classes: (0..n).map(block_of).collect() },
        Splits { train, val, test },
    )
}
