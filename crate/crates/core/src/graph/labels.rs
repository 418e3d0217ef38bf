use serde::{Deserialize, Serialize};

use super::{unsupported, Graph, HopMatrix, Labels};
use crate::error::{config_err, Result};

/// Number of training labels kept visible at `rate`: `ceil(rate * pool)`.
///
/// A tiny tolerance keeps products that are integral in exact arithmetic
/// (e.g. `0.6 * 1810`) from rounding up to the next integer.
pub fn visible_count(pool: usize, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(config_err(format!("label rate {rate} outside (0, 1]")));
    }
    if pool == 0 {
        return Err(config_err("training pool is empty"));
    }
    let exact = rate * pool as f64;
    Ok(((exact - 1e-9).ceil() as usize).clamp(1, pool))
}

/// Label agreement among ordered node pairs at one hop distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyBucket {
    /// Hop value; the last bucket (`hop == max_hv`) pools every pair at or
    /// beyond `max_hv`, including unreachable ones.
    pub hop: usize,
    pub saturated: bool,
    pub pairs: u64,
    pub same_label: u64,
}

impl ConsistencyBucket {
    pub fn rate(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.same_label as f64 / self.pairs as f64)
    }
}

/// Fraction of ordered pairs `(i, j)`, `i != j`, sharing a class label,
/// bucketed by hop value `1..max_hv` plus the saturated bucket.
pub fn label_consistency_by_hop(g: &Graph, hops: &HopMatrix) -> Result<Vec<ConsistencyBucket>> {
    let Labels::Single { classes, .. } = g.labels() else {
        return Err(unsupported(g.labels().mode_name()));
    };
    if hops.num_nodes() != g.num_nodes() {
        return Err(config_err("hop matrix does not match graph size"));
    }
    let max_hv = hops.max_hv();
    let mut buckets: Vec<ConsistencyBucket> =
        (1..=max_hv).map(|hop| ConsistencyBucket { hop, saturated: hop == max_hv, pairs: 0, same_label: 0 }).collect();
    for i in 0..g.num_nodes() {
        for (j, &hv) in hops.row(i).iter().enumerate() {
            if i == j {
                continue;
            }
            // Distinct nodes are at least one hop apart.
            let b = &mut buckets[(hv as usize).max(1) - 1];
            b.pairs += 1;
            if classes[i] == classes[j] {
                b.same_label += 1;
            }
        }
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{compute_hop_matrix, Splits};
    use crate::tensor::Tensor;

    fn labelled(n: usize, edges: Vec<(usize, usize)>, classes: Vec<usize>) -> Graph {
        Graph::new(
            n,
            edges,
            Tensor::zeros(n, 1),
            Labels::Single { num_classes: classes.iter().max().unwrap() + 1, classes },
            Splits::default(),
        )
        .unwrap()
    }

    #[test]
    fn benchmark_pool_counts() {
        // Cora, Citeseer, PubMed, PPI training pools at 20/40/60/80/100 %.
        let rates = [0.2, 0.4, 0.6, 0.8, 1.0];
        assert_eq!(rates.map(|r| visible_count(1208, r).unwrap()), [242, 484, 725, 967, 1208]);
        assert_eq!(rates.map(|r| visible_count(18217, r).unwrap()), [3644, 7287, 10931, 14574, 18217]);
        assert_eq!(rates.map(|r| visible_count(44906, r).unwrap()), [8982, 17963, 26944, 35925, 44906]);
        let citeseer = rates.map(|r| visible_count(1812, r).unwrap());
        assert_eq!([citeseer[0], citeseer[1], citeseer[3], citeseer[4]], [363, 725, 1450, 1812]);
    }

    #[test]
    fn integral_products_do_not_round_up() {
        assert_eq!(visible_count(1810, 0.6).unwrap(), 1086);
        assert_eq!(visible_count(10, 0.3).unwrap(), 3);
    }

    #[test]
    fn uniform_labels_are_fully_consistent() {
        let g = labelled(4, vec![(0, 1), (1, 2)], vec![0, 0, 0, 0]);
        let h = compute_hop_matrix(&g, 3).unwrap();
        for b in label_consistency_by_hop(&g, &h).unwrap() {
            assert_eq!(b.rate(), Some(1.0));
        }
    }

    #[test]
    fn two_cliques_consistent_at_hop_one() {
        let mut edges = vec![];
        for a in 0..3 {
            for b in a + 1..3 {
                edges.push((a, b));
                edges.push((a + 3, b + 3));
            }
        }
        let g = labelled(6, edges, vec![0, 0, 0, 1, 1, 1]);
        let h = compute_hop_matrix(&g, 2).unwrap();
        let buckets = label_consistency_by_hop(&g, &h).unwrap();
        assert_eq!(buckets[0].rate(), Some(1.0));
        assert_eq!(buckets[1].rate(), Some(0.0));
        assert!(buckets[1].saturated);
    }

    #[test]
    fn multi_label_is_unsupported() {
        let g = Graph::new(
            2,
            vec![],
            Tensor::zeros(2, 1),
            Labels::Multi { num_labels: 2, targets: vec![1, 0, 0, 1] },
            Splits::default(),
        )
        .unwrap();
        let h = compute_hop_matrix(&g, 2).unwrap();
        assert!(matches!(label_consistency_by_hop(&g, &h), Err(crate::Error::UnsupportedMode(_))));
    }
}
