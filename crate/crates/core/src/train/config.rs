use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, ModelConfig};
use crate::error::{config_err, Result};
use crate::graph::{generate_sbm, Dataset, SbmConfig};
use crate::schedule::ScheduleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One graph; test nodes take part in message passing unlabeled.
    Transductive,
    /// Several graphs; validation and test graphs are unseen in training.
    Inductive,
}

/// Every knob of one experiment. Field defaults match the `cora` preset
/// except for the data source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Graph container to load. When absent, `sbm` must be set.
    pub dataset: Option<PathBuf>,
    /// Synthetic fixture used when no dataset path is given.
    pub sbm: Option<SbmConfig>,
    pub mode: Mode,
    pub attention: AttentionKind,
    pub max_hv: usize,
    pub heads: Vec<usize>,
    pub widths: Vec<usize>,
    /// Dropout on layer inputs, attention coefficients and transformed
    /// features.
    pub dropout: [f64; 3],
    pub l2: f64,
    pub learning_rate: f64,
    /// Graphs per optimisation step (inductive mode).
    pub batch_size: usize,
    pub label_rate: f64,
    /// Fraction of far pairs sampled per batch for attention supervision.
    pub sample_ratio: f64,
    pub schedule: ScheduleConfig,
    /// Enables the attention loss. Baseline runs normally disable it.
    pub supervision: bool,
    /// Fixes gamma instead of following the schedule.
    pub gamma_override: Option<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub leaky_slope: f64,
    pub seeds: Vec<u64>,
    /// Store raw-logit snapshots every this many epochs.
    pub snapshot_every: Option<usize>,
    /// Cap on probe pairs per hop bucket in snapshots.
    pub snapshot_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            sbm: None,
            mode: Mode::Transductive,
            attention: AttentionKind::Addition,
            max_hv: 2,
            heads: vec![8, 1],
            widths: vec![8, 7],
            dropout: [0.2, 0.0, 0.2],
            l2: 1e-4,
            learning_rate: 0.005,
            batch_size: 1,
            label_rate: 1.0,
            sample_ratio: 0.0003,
            schedule: ScheduleConfig { decay: 0.95, ..ScheduleConfig::default() },
            supervision: true,
            gamma_override: None,
            patience: 100,
            max_epochs: 100_000,
            leaky_slope: 0.2,
            seeds: vec![0, 1, 2, 3, 4],
            snapshot_every: None,
            snapshot_pairs: 2000,
        }
    }
}

pub const PRESETS: [&str; 5] = ["cora", "citeseer", "pubmed", "ppi", "sbm"];

impl ExperimentConfig {
    /// Named hyperparameter sets for the benchmark datasets and the
    /// synthetic block-model fixture.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        Ok(match name {
            "cora" => base,
            "citeseer" => Self {
                widths: vec![8, 6],
                dropout: [0.6, 0.2, 0.6],
                l2: 0.0,
                sample_ratio: 0.0005,
                schedule: ScheduleConfig::default(),
                ..base
            },
            "pubmed" => Self {
                heads: vec![8, 8],
                widths: vec![8, 3],
                dropout: [0.0; 3],
                l2: 0.0,
                learning_rate: 0.01,
                sample_ratio: 0.0001,
                schedule: ScheduleConfig::default(),
                ..base
            },
            "ppi" => Self {
                mode: Mode::Inductive,
                attention: AttentionKind::Product,
                heads: vec![4, 4, 6],
                widths: vec![256, 256, 121],
                dropout: [0.0; 3],
                l2: 0.0,
                batch_size: 2,
                sample_ratio: 0.0005,
                schedule: ScheduleConfig::default(),
                ..base
            },
            "sbm" => Self {
                sbm: Some(SbmConfig::default()),
                attention: AttentionKind::Product,
                widths: vec![8, 2],
                dropout: [0.0; 3],
                label_rate: 0.2,
                sample_ratio: 0.03,
                schedule: ScheduleConfig { decay: 0.99, ..ScheduleConfig::default() },
                max_epochs: 600,
                ..base
            },
            other => {
                return Err(config_err(format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", "))))
            }
        })
    }

    /// The same experiment with the plain GAT score and no attention loss.
    pub fn as_baseline(&self) -> Self {
        Self { attention: AttentionKind::Baseline, supervision: false, gamma_override: None, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_hv < 2 {
            return Err(config_err(format!("max_hv {} must be >= 2", self.max_hv)));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(config_err("patience, max_epochs and batch_size must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(config_err(format!("label rate {} outside (0, 1]", self.label_rate)));
        }
        if self.supervision && !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(config_err(format!("sample ratio {} outside (0, 1]", self.sample_ratio)));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.l2.is_nan() || self.l2 < 0.0 {
            return Err(config_err("learning rate must be > 0 and l2 >= 0"));
        }
        if let Some(g) = self.gamma_override {
            if !(0.0..=1.0).contains(&g) {
                return Err(config_err(format!("gamma override {g} outside [0, 1]")));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(config_err("snapshot_every must be >= 1"));
        }
        self.schedule.validate()?;
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize) -> Result<ModelConfig> {
        ModelConfig::stacked(
            self.attention,
            self.max_hv,
            input_dim,
            &self.heads,
            &self.widths,
            self.dropout,
            self.leaky_slope,
        )
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.dataset, &self.sbm) {
            (Some(path), _) => Dataset::load(path),
            (None, Some(sbm)) => Ok(Dataset::single(generate_sbm(sbm)?)),
            (None, None) => Err(config_err("no dataset path and no SBM fixture configured")),
        }
    }
}
