use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{GraphInput, HopGat, PairList};
use crate::error::{Error, Result};
use crate::graph::{compute_hop_matrix, label_consistency_by_hop, ConsistencyBucket, Dataset, HopMatrix};
use crate::tensor::Tape;

/// Hop buckets used for logit statistics: self pairs, pairs closer than
/// `max_hv`, and saturated pairs.
pub const BUCKET_NAMES: [&str; 3] = ["hop0", "near", "far"];

pub fn bucket_of(hv: usize, max_hv: usize) -> usize {
    if hv == 0 {
        0
    } else if hv < max_hv {
        1
    } else {
        2
    }
}

/// Label consistency per hop, pooled over every graph of the dataset.
pub fn analyze_hops(dataset: &Dataset, max_probe_hop: usize) -> Result<Vec<ConsistencyBucket>> {
    let mut total: Vec<ConsistencyBucket> = Vec::new();
    for g in &dataset.graphs {
        let hops = compute_hop_matrix(g, max_probe_hop)?;
        let buckets = label_consistency_by_hop(g, &hops)?;
        if total.is_empty() {
            total = buckets;
        } else {
            for (t, b) in total.iter_mut().zip(buckets) {
                t.pairs += b.pairs;
                t.same_label += b.same_label;
            }
        }
    }
    Ok(total)
}

/// A fixed set of node pairs whose raw logits are tracked, at most `cap`
/// per hop bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub pairs: PairList,
    pub max_hv: usize,
}

impl ProbeSet {
    pub fn new(hops: &HopMatrix, cap: usize, seed: u64) -> Self {
        let n = hops.num_nodes();
        let max_hv = hops.max_hv();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<(usize, usize)> = Vec::new();

        let mut near: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
        for i in 0..n {
            for (j, &hv) in hops.row(i).iter().enumerate() {
                let b = bucket_of(hv as usize, max_hv);
                if b < 2 {
                    near[b].push((i, j));
                }
            }
        }
        for bucket in near {
            chosen.extend(capped(bucket, cap, &mut rng));
        }

        let far_total = hops.far_count();
        if far_total <= cap || 2 * far_total < n * n {
            let far: Vec<(usize, usize)> =
                (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| hops.is_saturated(i, j)).collect();
            chosen.extend(capped(far, cap, &mut rng));
        } else {
            let mut set = BTreeSet::new();
            while set.len() < cap {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                if hops.is_saturated(i, j) {
                    set.insert((i, j));
                }
            }
            chosen.extend(set);
        }
        Self { pairs: PairList::new(&chosen, hops), max_hv }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn hops(&self) -> Vec<usize> {
        self.pairs.hops.to_vec()
    }
}

fn capped(items: Vec<(usize, usize)>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if items.len() <= cap {
        return items;
    }
    let mut picked = index::sample(rng, items.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| items[k]).collect()
}

/// Evaluation-mode raw logits of every probe pair, as `[layer][head][pair]`.
pub fn probe_logits(model: &HopGat, input: &GraphInput, probe: &ProbeSet) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut tape, &vars, input, Some(&probe.pairs), false, &mut rng)?;
    Ok(out
        .attention
        .iter()
        .map(|layer| {
            layer.iter().map(|h| h.query_logits.map_or_else(Vec::new, |q| tape.value(q).data().to_vec())).collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    pub mean: f64,
}

/// Per-bucket counts and means of one head's logits.
pub fn bucket_stats(logits: &[f64], hops: &[usize], max_hv: usize) -> [BucketStats; 3] {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (&e, &hv) in logits.iter().zip(hops) {
        let b = bucket_of(hv, max_hv);
        sums[b] += e;
        counts[b] += 1;
    }
    std::array::from_fn(|b| BucketStats {
        count: counts[b],
        mean: if counts[b] > 0 { sums[b] / counts[b] as f64 } else { f64::NAN },
    })
}

/// Raw logits of the probe pairs at one epoch, `[layer][head][pair]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitSnapshot {
    pub epoch: usize,
    pub logits: Vec<Vec<Vec<f64>>>,
}

/// Snapshots of one training run over a fixed probe set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    pub max_hv: usize,
    /// Saturated hop value of every probe pair.
    pub hops: Vec<usize>,
    pub snapshots: Vec<LogitSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// `counts[bucket][bin]`.
    pub counts: [Vec<usize>; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHistogram {
    pub epoch: usize,
    pub histogram: Histogram,
    pub stats: [BucketStats; 3],
}

/// Histograms of one head's logits per snapshot, split by hop bucket. All
/// snapshots share one value range so they can be compared.
pub fn export_attention_hist(
    series: &SnapshotSeries,
    layer: usize,
    head: usize,
    bins: usize,
) -> Result<Vec<SnapshotHistogram>> {
    if series.snapshots.is_empty() {
        return Err(Error::Usage("no logit snapshots recorded; train with snapshots enabled".into()));
    }
    if bins == 0 {
        return Err(Error::Usage("histogram needs at least one bin".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &series.snapshots {
        for &e in pick(s, layer, head)? {
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    if lo >= hi {
        let mid = if lo.is_finite() { lo } else { 0.0 };
        lo = mid - 0.5;
        hi = mid + 0.5;
    }
    let width = (hi - lo) / bins as f64;
    series
        .snapshots
        .iter()
        .map(|s| {
            let logits = pick(s, layer, head)?;
            let mut counts: [Vec<usize>; 3] = std::array::from_fn(|_| vec![0; bins]);
            for (&e, &hv) in logits.iter().zip(&series.hops) {
                let bin = (((e - lo) / width) as usize).min(bins - 1);
                counts[bucket_of(hv, series.max_hv)][bin] += 1;
            }
            Ok(SnapshotHistogram {
                epoch: s.epoch,
                histogram: Histogram { lo, hi, counts },
                stats: bucket_stats(logits, &series.hops, series.max_hv),
            })
        })
        .collect()
}

fn pick(s: &LogitSnapshot, layer: usize, head: usize) -> Result<&[f64]> {
    s.logits
        .get(layer)
        .and_then(|l| l.get(head))
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Usage(format!("snapshot has no layer {layer} head {head}")))
}
