#![allow(dead_code)]

use hopgat::graph::{Graph, Labels, Splits};
use hopgat::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Erdos-Renyi graph with Gaussian-ish features and random labels. Every
/// node is in the training split.
pub fn random_graph(n: usize, p: f64, features: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let x = Tensor::from_fn(n, features, || rng.random_range(-1.0..1.0));
    let labels =
        Labels::Single { num_classes: classes, classes: (0..n).map(|_| rng.random_range(0..classes)).collect() };
    let splits = Splits { train: (0..n).collect(), ..Splits::default() };
    Graph::new(n, edges, x, labels, splits).unwrap()
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, || rng.random_range(-1.0..1.0))
}

/// Exact all-pairs shortest paths; `usize::MAX` marks unreachable pairs.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in edges {
        if a != b {
            d[a][b] = 1;
            d[b][a] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d.into_iter().map(|r| r.into_iter().map(|v| if v >= inf { usize::MAX } else { v }).collect()).collect()
}
