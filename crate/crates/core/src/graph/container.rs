//! Neutral JSON container shared with the dataset converter.
//!
//! ```json
//! {"format_version": 1,
//!  "graphs": [{"num_nodes": 3, "directed": false, "edges": [[0, 1], [1, 2]],
//!              "features": {"rows": 3, "cols": 1, "data": [0.5, 1.0, -2.0]},
//!              "labels": {"mode": "single", "values": [0, 1, 1]},
//!              "masks": {"train": [0], "val": [1], "test": [2]}}]}
//! ```
//!
//! Multi-label graphs use `{"mode": "multi", "values": [[0, 1, ...], ...]}`.
//! Indices are 0-based; floats are written in shortest round-trip form.

use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, Labels, Splits};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerDoc {
    pub format_version: u32,
    pub graphs: Vec<GraphDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub num_nodes: usize,
    #[serde(default)]
    pub directed: bool,
    pub edges: Vec<[usize; 2]>,
    pub features: FeaturesDoc,
    pub labels: LabelsDoc,
    pub masks: MasksDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturesDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LabelsDoc {
    Single {
        values: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    Multi {
        values: Vec<Vec<u8>>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MasksDoc {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ContainerDoc {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let graphs = ds
            .graphs
            .iter()
            .map(|g| GraphDoc {
                num_nodes: g.num_nodes(),
                directed: false,
                edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
                features: FeaturesDoc {
                    rows: g.features().rows(),
                    cols: g.features().cols(),
                    data: g.features().data().to_vec(),
                },
                labels: match g.labels() {
                    Labels::Single { num_classes, classes } => {
                        LabelsDoc::Single { values: classes.clone(), num_classes: Some(*num_classes) }
                    }
                    Labels::Multi { num_labels, targets } => {
                        LabelsDoc::Multi { values: targets.chunks(*num_labels).map(<[u8]>::to_vec).collect() }
                    }
                },
                masks: MasksDoc {
                    train: g.splits().train.clone(),
                    val: g.splits().val.clone(),
                    test: g.splits().test.clone(),
                },
            })
            .collect();
        Self { format_version: FORMAT_VERSION, graphs }
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        if self.format_version != FORMAT_VERSION {
            return Err(config_err(format!("unsupported container format_version {}", self.format_version)));
        }
        // Single-label class count is shared across graphs.
        let shared_classes = self
            .graphs
            .iter()
            .filter_map(|g| match &g.labels {
                LabelsDoc::Single { values, num_classes } => {
                    Some(num_classes.unwrap_or(0).max(values.iter().max().map_or(0, |m| m + 1)))
                }
                LabelsDoc::Multi { .. } => None,
            })
            .max()
            .unwrap_or(0);
        let graphs = self
            .graphs
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.into_graph(shared_classes).map_err(|e| config_err(format!("graph {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(graphs)
    }
}

impl GraphDoc {
    fn into_graph(self, num_classes: usize) -> Result<Graph> {
        if self.directed {
            return Err(config_err("directed graphs are not supported"));
        }
        let features = Tensor::from_vec(self.features.rows, self.features.cols, self.features.data)?;
        let labels = match self.labels {
            LabelsDoc::Single { values, .. } => Labels::Single { num_classes, classes: values },
            LabelsDoc::Multi { values } => {
                let width = values.first().map_or(0, Vec::len);
                if values.iter().any(|r| r.len() != width) {
                    return Err(config_err("ragged multi-label rows"));
                }
                Labels::Multi { num_labels: width, targets: values.concat() }
            }
        };
        Graph::new(
            self.num_nodes,
            self.edges.into_iter().map(|[a, b]| (a, b)).collect(),
            features,
            labels,
            Splits { train: self.masks.train, val: self.masks.val, test: self.masks.test },
        )
    }
}
