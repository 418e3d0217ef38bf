//! Graph container, neutral on-disk format and graph statistics.

mod container;
mod hops;
mod labels;
mod sbm;

pub use container::{ContainerDoc, FORMAT_VERSION};
pub use hops::{compute_hop_matrix, HopMatrix};
pub use labels::{label_consistency_by_hop, visible_count, ConsistencyBucket};
pub use sbm::{generate_sbm, SbmConfig};

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

/// Per-node targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One class id per node.
    Single { num_classes: usize, classes: Vec<usize> },
    /// Multi-hot rows, `num_labels` entries per node, flattened row-major.
    Multi { num_labels: usize, targets: Vec<u8> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single { classes, .. } => classes.len(),
            Labels::Multi { num_labels, targets } => targets.len() / (*num_labels).max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the model's output layer for these labels.
    pub fn output_width(&self) -> usize {
        match self {
            Labels::Single { num_classes, .. } => *num_classes,
            Labels::Multi { num_labels, .. } => *num_labels,
        }
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, Labels::Multi { .. })
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            Labels::Single { .. } => "single",
            Labels::Multi { .. } => "multi",
        }
    }
}

/// Disjoint node-id sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// An undirected attributed graph with labels, splits and a visibility mask
/// over training labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: Tensor,
    labels: Labels,
    splits: Splits,
    label_visible: Vec<bool>,
}

impl Graph {
    /// Validates and assembles a graph. Edges are symmetrised, duplicate
    /// edges collapse and self-loops are dropped (self pairs are implicit).
    /// Every training label starts out visible.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Labels,
        splits: Splits,
    ) -> Result<Self> {
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= num_nodes || b >= num_nodes) {
            return Err(config_err(format!("edge ({a}, {b}) outside 0..{num_nodes}")));
        }
        if features.rows() != num_nodes {
            return Err(config_err(format!("{} feature rows for {num_nodes} nodes", features.rows())));
        }
        if !features.is_finite() {
            return Err(config_err("non-finite node feature"));
        }
        if labels.len() != num_nodes {
            return Err(config_err(format!("{} labels for {num_nodes} nodes", labels.len())));
        }
        if let Labels::Single { num_classes, classes } = &labels {
            if let Some(c) = classes.iter().find(|&&c| c >= *num_classes) {
                return Err(config_err(format!("class {c} outside 0..{num_classes}")));
            }
        }
        if let Labels::Multi { num_labels, targets } = &labels {
            if *num_labels == 0 || targets.iter().any(|&t| t > 1) {
                return Err(config_err("multi-label targets must be non-empty 0/1 rows"));
            }
        }
        let mut seen = vec![false; num_nodes];
        for (name, ids) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            for &i in ids {
                if i >= num_nodes {
                    return Err(config_err(format!("{name} node {i} outside 0..{num_nodes}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(config_err(format!("node {i} appears twice across train/val/test")));
                }
            }
        }

        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_nodes];
        for &(a, b) in &edges {
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        let adjacency: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut label_visible = vec![false; num_nodes];
        for &i in &splits.train {
            label_visible[i] = true;
        }
        Ok(Self { num_nodes, edges, adjacency, features, labels, splits, label_visible })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Edges as supplied at construction.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Symmetrised neighbour lists without self-loops, sorted by id.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn label_visible(&self) -> &[bool] {
        &self.label_visible
    }

    /// Training nodes whose labels the classification loss may use.
    pub fn visible_train_nodes(&self) -> Vec<usize> {
        self.splits.train.iter().copied().filter(|&i| self.label_visible[i]).collect()
    }

    /// Marks `ceil(rate * |train|)` training nodes visible, sampled without
    /// replacement; all other training labels are hidden.
    pub fn subsample_labels(&self, rate: f64, seed: u64) -> Result<Graph> {
        let count = visible_count(self.splits.train.len(), rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        out.label_visible = vec![false; self.num_nodes];
        for k in index::sample(&mut rng, self.splits.train.len(), count) {
            out.label_visible[self.splits.train[k]] = true;
        }
        Ok(out)
    }

    fn set_visibility(&mut self, visible: Vec<bool>) {
        self.label_visible = visible;
    }
}

/// One or more graphs sharing a feature space and label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(config_err("dataset has no graphs"));
        };
        let (f, w, multi) = (first.feature_dim(), first.labels.output_width(), first.labels.is_multi());
        for g in &graphs {
            if g.feature_dim() != f || g.labels.output_width() != w || g.labels.is_multi() != multi {
                return Err(config_err("graphs disagree on feature width or label space"));
            }
        }
        Ok(Self { graphs })
    }

    pub fn single(graph: Graph) -> Self {
        Self { graphs: vec![graph] }
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    pub fn output_width(&self) -> usize {
        self.graphs[0].labels.output_width()
    }

    pub fn is_multi_label(&self) -> bool {
        self.graphs[0].labels.is_multi()
    }

    pub fn split_size(&self, split: Split) -> usize {
        self.graphs.iter().map(|g| g.splits.get(split).len()).sum()
    }

    pub fn visible_label_count(&self) -> usize {
        self.graphs.iter().map(|g| g.visible_train_nodes().len()).sum()
    }

    /// Label-rate subsampling pooled over the training nodes of every graph.
    pub fn subsample_labels(&self, rate: f64, seed: u64) -> Result<Dataset> {
        let pool: Vec<(usize, usize)> =
            self.graphs.iter().enumerate().flat_map(|(gi, g)| g.splits.train.iter().map(move |&n| (gi, n))).collect();
        let count = visible_count(pool.len(), rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut visible: Vec<Vec<bool>> = self.graphs.iter().map(|g| vec![false; g.num_nodes]).collect();
        for k in index::sample(&mut rng, pool.len(), count) {
            let (gi, n) = pool[k];
            visible[gi][n] = true;
        }
        let mut out = self.clone();
        for (g, v) in out.graphs.iter_mut().zip(visible) {
            g.set_visibility(v);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ContainerDoc = serde_json::from_str(text)?;
        doc.into_dataset()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ContainerDoc::from_dataset(self))?)
    }
}

impl From<Graph> for Dataset {
    fn from(g: Graph) -> Self {
        Dataset::single(g)
    }
}

pub(crate) fn unsupported(mode: &str) -> Error {
    Error::UnsupportedMode(format!("{mode}-label graphs are not supported here"))
}
