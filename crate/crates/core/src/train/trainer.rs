use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::analysis::{bucket_stats, probe_logits, BucketStats, LogitSnapshot, ProbeSet, SnapshotSeries};
use super::config::{ExperimentConfig, Mode};
use super::metrics::{accuracy, classification_loss, mean_std, F1Counts};
use crate::attention::{AttentionKind, GraphInput, HopGat};
use crate::error::{config_err, Error, Result};
use crate::graph::{compute_hop_matrix, Dataset, Labels, Split};
use crate::schedule::ScheduleState;
use crate::supervision::{attention_loss, PairSampler};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

/// Loss and task metric (accuracy or micro-F1) over one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

pub fn metric_name(dataset: &Dataset) -> &'static str {
    if dataset.is_multi_label() {
        "micro_f1"
    } else {
        "accuracy"
    }
}

/// One row of the per-epoch schedule trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub temp: f64,
    /// Mixing weight of the last batch in the epoch.
    pub gamma: f64,
    pub saturated: bool,
    /// Mean over the epoch's batches.
    pub l_cls: f64,
    /// Mean over the epoch's batches; absent without supervision.
    pub l_att: Option<f64>,
    pub val_loss: f64,
    pub val_metric: f64,
}

/// Hop matrices, neighbourhoods and pair samplers for every graph of a
/// dataset. These depend on the configuration but not on the seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub inputs: Vec<GraphInput>,
    samplers: Vec<Option<PairSampler>>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        let inputs = build_inputs(&dataset, cfg.attention, cfg.max_hv)?;
        let samplers = inputs
            .iter()
            .map(|inp| cfg.supervision.then(|| PairSampler::new(&inp.hops, cfg.sample_ratio)).transpose())
            .collect::<Result<_>>()?;
        Ok(Self { dataset, inputs, samplers })
    }
}

fn build_inputs(dataset: &Dataset, kind: AttentionKind, max_hv: usize) -> Result<Vec<GraphInput>> {
    dataset.graphs.iter().map(|g| Ok(GraphInput::new(g, compute_hop_matrix(g, max_hv)?, kind))).collect()
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val: Evaluation,
    pub test: Option<Evaluation>,
    pub trace: Vec<EpochRecord>,
    pub snapshots: Option<SnapshotSeries>,
    /// Parameters restored from the best validation epoch.
    pub model: HopGat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_loss: f64,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
}

impl From<&RunResult> for RunSummary {
    fn from(r: &RunResult) -> Self {
        Self {
            seed: r.seed,
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            val_loss: r.val.loss,
            val_metric: r.val.metric,
            test_metric: r.test.map(|t| t.metric),
        }
    }
}

/// Metrics over every seed of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metric: String,
    pub attention: AttentionKind,
    pub label_rate: f64,
    pub visible_labels: usize,
    pub runs: Vec<RunSummary>,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
    pub val_mean: f64,
    pub val_std: f64,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub runs: Vec<RunResult>,
}

/// Trains one model per configured seed.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Experiment> {
    let prepared = Prepared::new(cfg, dataset)?;
    let runs = cfg.seeds.iter().map(|&seed| train_run(cfg, &prepared, seed)).collect::<Result<Vec<_>>>()?;
    let tests: Vec<f64> = runs.iter().filter_map(|r| r.test.map(|t| t.metric)).collect();
    let vals: Vec<f64> = runs.iter().map(|r| r.val.metric).collect();
    let (test_mean, test_std) = if tests.len() == runs.len() {
        let (m, s) = mean_std(&tests);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    let (val_mean, val_std) = mean_std(&vals);
    let visible_labels = prepared.dataset.subsample_labels(cfg.label_rate, cfg.seeds[0])?.visible_label_count();
    Ok(Experiment {
        report: ExperimentReport {
            metric: metric_name(&prepared.dataset).to_string(),
            attention: cfg.attention,
            label_rate: cfg.label_rate,
            visible_labels,
            runs: runs.iter().map(RunSummary::from).collect(),
            test_mean,
            test_std,
            val_mean,
            val_std,
        },
        runs,
    })
}

fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite { op } => Error::Diverged { epoch, detail: format!("non-finite value produced by `{op}`") },
        other => other,
    }
}

/// Trains a single model under `seed`: label subsampling, initialisation,
/// dropout masks and pair sampling all derive from it.
pub fn train_run(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<RunResult> {
    let dataset = prepared.dataset.subsample_labels(cfg.label_rate, seed)?;
    if dataset.output_width() != *cfg.widths.last().unwrap_or(&0) {
        return Err(config_err(format!(
            "last layer width {:?} does not match the {} outputs the labels need",
            cfg.widths.last(),
            dataset.output_width()
        )));
    }
    if dataset.split_size(Split::Val) == 0 {
        return Err(config_err("early stopping needs validation nodes"));
    }
    if cfg.gamma_override.is_some_and(|g| g > 0.0) && !cfg.supervision {
        return Err(config_err("a positive gamma override needs supervision enabled"));
    }
    let model_cfg = cfg.model_config(dataset.feature_dim())?;
    let mut model = HopGat::new(model_cfg, seed)?;
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), model.params());
    let mut sched = ScheduleState::new(&cfg.schedule);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
    sample_rng.set_stream(2);

    let visible: Vec<Vec<usize>> = dataset.graphs.iter().map(|g| g.visible_train_nodes()).collect();
    let train_graphs: Vec<usize> = (0..visible.len()).filter(|&g| !visible[g].is_empty()).collect();

    let probe =
        cfg.snapshot_every.map(|_| ProbeSet::new(&prepared.inputs[train_graphs[0]].hops, cfg.snapshot_pairs, seed));
    let mut snapshots =
        probe.as_ref().map(|p| SnapshotSeries { max_hv: cfg.max_hv, hops: p.hops(), snapshots: Vec::new() });

    let mut trace = Vec::new();
    let (mut best_loss, mut best_metric) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut since_loss, mut since_metric) = (0usize, 0usize);
    let mut best: Option<(usize, Evaluation, Vec<Tensor>)> = None;
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        if epoch > 0 {
            sched.step_temperature(&cfg.schedule);
        }
        let mut order = train_graphs.clone();
        if cfg.mode == Mode::Inductive {
            order.shuffle(&mut sample_rng);
        }
        let (mut cls_sum, mut att_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = model.params().bind(&mut tape);
            let mut cls_terms = Vec::new();
            let mut att_terms = Vec::new();
            for &gi in batch {
                let input = &prepared.inputs[gi];
                let sample = prepared.samplers[gi].as_ref().map(|s| s.sample(&input.hops, sample_rng.random()));
                let out = model
                    .forward(&mut tape, &vars, input, sample.as_ref().map(|s| &s.pairs), true, &mut dropout_rng)
                    .map_err(|e| diverged(epoch, e))?;
                cls_terms.push(classification_loss(&mut tape, out.scores, dataset.graphs[gi].labels(), &visible[gi])?);
                if let Some(s) = &sample {
                    att_terms.push(attention_loss(&mut tape, &out.query_logits(), &s.targets)?);
                }
            }
            let l_cls = sum_vars(&mut tape, &cls_terms)?;
            let l_att = if att_terms.is_empty() { None } else { Some(sum_vars(&mut tape, &att_terms)?) };
            let att_value = l_att.map(|v| tape.item(v));
            let gamma = match (cfg.gamma_override, att_value) {
                (Some(g), _) => g,
                (None, Some(a)) => sched.compute_gamma(a, &cfg.schedule),
                (None, None) => 0.0,
            };
            sched.gamma = gamma;
            let mut total = l_cls;
            if gamma != 0.0 {
                let att = l_att.expect("gamma > 0 implies supervision");
                let a = tape.scale(l_cls, 1.0 - gamma);
                let b = tape.scale(att, gamma);
                total = tape.add(a, b)?;
            }
            if cfg.l2 > 0.0 {
                let pen = model.l2_penalty(&mut tape, &vars)?;
                let pen = tape.scale(pen, cfg.l2);
                total = tape.add(total, pen)?;
            }
            let mut grads = tape.backward(total).map_err(|e| diverged(epoch, e))?;
            model.params_mut().load_grads(&mut grads, &vars);
            adam.step(model.params_mut())?;
            cls_sum += tape.item(l_cls);
            att_sum += att_value.unwrap_or(0.0);
            batches += 1;
        }

        let val = evaluate_inputs(&model, &prepared.inputs, &dataset, Split::Val)?;
        if !val.loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: "validation loss is not finite".into() });
        }
        trace.push(EpochRecord {
            epoch,
            temp: sched.temp,
            gamma: sched.gamma,
            saturated: sched.saturated,
            l_cls: cls_sum / batches as f64,
            l_att: cfg.supervision.then(|| att_sum / batches as f64),
            val_loss: val.loss,
            val_metric: val.metric,
        });
        if let (Some(every), Some(p), Some(series)) = (cfg.snapshot_every, &probe, snapshots.as_mut()) {
            if epoch % every == 0 {
                series
                    .snapshots
                    .push(LogitSnapshot { epoch, logits: probe_logits(&model, &prepared.inputs[train_graphs[0]], p)? });
            }
        }

        if val.loss < best_loss {
            best_loss = val.loss;
            since_loss = 0;
        } else {
            since_loss += 1;
        }
        if val.metric > best_metric {
            best_metric = val.metric;
            since_metric = 0;
        } else {
            since_metric += 1;
        }
        let better = match &best {
            None => true,
            Some((_, b, _)) => val.metric > b.metric || (val.metric == b.metric && val.loss < b.loss),
        };
        if better {
            let values = model.params().iter().map(|p| p.value.clone()).collect();
            best = Some((epoch, val, values));
        }
        epochs_run = epoch + 1;
        if epoch % 50 == 0 {
            log::info!(
                "seed {seed} epoch {epoch}: l_cls {:.4} gamma {:.3} val loss {:.4} val metric {:.4}",
                cls_sum / batches as f64,
                sched.gamma,
                val.loss,
                val.metric
            );
        }
        if since_loss >= cfg.patience && since_metric >= cfg.patience {
            log::info!("seed {seed}: early stop after epoch {epoch}");
            break;
        }
    }

    let (best_epoch, val, values) = best.expect("at least one epoch runs");
    for (k, v) in values.into_iter().enumerate() {
        model.params_mut().get_mut(k).value = v;
    }
    let test = if dataset.split_size(Split::Test) > 0 {
        Some(evaluate_inputs(&model, &prepared.inputs, &dataset, Split::Test)?)
    } else {
        None
    };
    Ok(RunResult { seed, epochs_run, best_epoch, val, test, trace, snapshots, model })
}

fn sum_vars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Evaluation-mode loss and metric over `split`, pooled across graphs.
pub fn evaluate_inputs(model: &HopGat, inputs: &[GraphInput], dataset: &Dataset, split: Split) -> Result<Evaluation> {
    let total = dataset.split_size(split);
    if total == 0 {
        return Err(config_err(format!("{split:?} split is empty")));
    }
    let mut loss = 0.0;
    let mut hits = 0.0;
    let mut f1 = F1Counts::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (g, input) in dataset.graphs.iter().zip(inputs) {
        let nodes = g.splits().get(split);
        if nodes.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape);
        let out = model.forward(&mut tape, &vars, input, None, false, &mut rng)?;
        let l = classification_loss(&mut tape, out.scores, g.labels(), nodes)?;
        loss += tape.item(l) * nodes.len() as f64;
        let scores = tape.value(out.scores);
        match g.labels() {
            Labels::Single { classes, .. } => hits += accuracy(scores, classes, nodes)? * nodes.len() as f64,
            Labels::Multi { num_labels, targets } => f1.add(scores, *num_labels, targets, nodes),
        }
    }
    let metric = if dataset.is_multi_label() { f1.f1() } else { hits / total as f64 };
    Ok(Evaluation { loss: loss / total as f64, metric })
}

/// Evaluates a trained model on a dataset split.
pub fn evaluate(model: &HopGat, dataset: &Dataset, split: Split) -> Result<Evaluation> {
    let cfg = model.config();
    if dataset.feature_dim() != cfg.input_dim() || dataset.output_width() != cfg.output_width() {
        return Err(config_err(format!(
            "model maps {} features to {} outputs; dataset has {} features and {} outputs",
            cfg.input_dim(),
            cfg.output_width(),
            dataset.feature_dim(),
            dataset.output_width()
        )));
    }
    let inputs = build_inputs(dataset, cfg.kind(), cfg.max_hv)?;
    evaluate_inputs(model, &inputs, dataset, split)
}

/// Bucket statistics of every head's raw logits over a probe set,
/// `[layer][head]`.
pub fn logit_bucket_stats(model: &HopGat, input: &GraphInput, probe: &ProbeSet) -> Result<Vec<Vec<[BucketStats; 3]>>> {
    let hops = probe.hops();
    Ok(probe_logits(model, input, probe)?
        .iter()
        .map(|layer| layer.iter().map(|h| bucket_stats(h, &hops, probe.max_hv)).collect())
        .collect())
}
