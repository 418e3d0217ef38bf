use std::collections::VecDeque;

use rayon::prelude::*;

use super::Graph;
use crate::error::{config_err, Result};

/// All-pairs shortest-path hop counts, saturated at `max_hv`.
///
/// An entry equal to `max_hv` means "at least `max_hv` hops or unreachable".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    max_hv: usize,
    values: Vec<u8>,
}

impl HopMatrix {
    /// Wraps precomputed values, saturating anything above `max_hv`.
    pub fn from_values(n: usize, max_hv: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != n * n {
            return Err(config_err(format!("{} hop values for {n} nodes", values.len())));
        }
        if max_hv == 0 || max_hv > u8::MAX as usize {
            return Err(config_err(format!("max_hv {max_hv} outside 1..=255")));
        }
        let cap = max_hv as u8;
        Ok(Self { n, max_hv, values: values.into_iter().map(|v| v.min(cap)).collect() })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn max_hv(&self) -> usize {
        self.max_hv
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.values[i * self.n + j] as usize
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn is_saturated(&self, i: usize, j: usize) -> bool {
        self.get(i, j) >= self.max_hv
    }

    /// Ordered pairs (self pairs included) closer than `max_hv`.
    pub fn near_count(&self) -> usize {
        let cap = self.max_hv as u8;
        self.values.iter().filter(|&&v| v < cap).count()
    }

    /// Ordered pairs at or beyond `max_hv`.
    pub fn far_count(&self) -> usize {
        self.n * self.n - self.near_count()
    }
}

/// Breadth-first search from every node, truncated at depth `max_hv`.
pub fn compute_hop_matrix(g: &Graph, max_hv: usize) -> Result<HopMatrix> {
    if max_hv == 0 || max_hv > u8::MAX as usize {
        return Err(config_err(format!("max_hv {max_hv} outside 1..=255")));
    }
    let n = g.num_nodes();
    let cap = max_hv as u8;
    let mut values = vec![cap; n * n];
    values.par_chunks_mut(n.max(1)).enumerate().for_each(|(src, row)| {
        if src >= n {
            return;
        }
        let mut queue = VecDeque::new();
        row[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let next = row[u] + 1;
            if next >= cap {
                continue;
            }
            for &v in g.neighbors(u) {
                if row[v] == cap {
                    row[v] = next;
                    queue.push_back(v);
                }
            }
        }
    });
    Ok(HopMatrix { n, max_hv, values })
}
