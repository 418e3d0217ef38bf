mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hopgat::attention::{AttentionKind, HopGat};
use hopgat::graph::Split;
use hopgat::train::analysis::{analyze_hops, export_attention_hist, SnapshotSeries, BUCKET_NAMES};
use hopgat::train::{evaluate, metric_name, run_experiment, ExperimentConfig, PRESETS};
use plot::{line_chart, Series};
use serde::Serialize;

/// Snapshot interval used when `--snapshots` is given without an interval.
const DEFAULT_SNAPSHOT_EVERY: usize = 10;

#[derive(Parser)]
#[command(name = "hopgat", version, about = "Hop-aware supervised graph attention networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write checkpoints, traces and metrics.
    Train(TrainArgs),
    /// Score a saved checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Label consistency rate per hop distance.
    AnalyzeHops(AnalyzeArgs),
    /// Histograms of raw attention logits from stored training snapshots.
    ExportAttentionHist(HistArgs),
    /// Compare HopGAT against the baseline over several label rates.
    SweepLabelRates(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Baseline,
    Product,
    Addition,
}

impl From<KindArg> for AttentionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Baseline => AttentionKind::Baseline,
            KindArg::Product => AttentionKind::Product,
            KindArg::Addition => AttentionKind::Addition,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Named hyperparameter set to start from.
    #[arg(long, default_value = "sbm", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: String,
    /// TOML file whose keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph container to load instead of the configured source.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    attention: Option<KindArg>,
    #[arg(long)]
    label_rate: Option<f64>,
    #[arg(long)]
    sample_ratio: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Plain GAT scoring without attention supervision.
    #[arg(long)]
    baseline: bool,
    /// Fixed loss mixing weight instead of the annealing schedule.
    #[arg(long)]
    gamma: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let preset = ExperimentConfig::preset(&self.preset)?;
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                overlay(&preset, &text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => preset,
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(k) = self.attention {
            cfg.attention = k.into();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field.clone() { cfg.$field = v; })*};
        }
        set!(label_rate, sample_ratio, learning_rate, max_epochs, patience, seeds);
        if self.baseline {
            cfg = cfg.as_baseline();
        }
        if self.gamma.is_some() {
            cfg.gamma_override = self.gamma;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies the keys of a TOML document on top of `base`; nested tables
/// merge key by key.
fn overlay(base: &ExperimentConfig, text: &str) -> Result<ExperimentConfig> {
    fn merge(into: &mut toml::Table, from: toml::Table) {
        for (k, v) in from {
            match (into.get_mut(&k), v) {
                (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
                (_, v) => {
                    into.insert(k, v);
                }
            }
        }
    }
    let mut table = toml::Table::try_from(base)?;
    merge(&mut table, text.parse::<toml::Table>()?);
    Ok(table.try_into()?)
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Record raw-logit snapshots for histogram export.
    #[arg(long)]
    snapshots: bool,
    /// Snapshot interval in epochs; implies `--snapshots`.
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Distances at or beyond this value share the last bucket.
    #[arg(long, default_value_t = 6)]
    max_hop: usize,
    #[arg(long, default_value = "runs/hops")]
    out: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    /// Snapshot file written by `train --snapshots`.
    #[arg(long)]
    snapshots: PathBuf,
    /// Layer index; defaults to the last layer.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    head: usize,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value = "runs/hist")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    rates: Vec<f64>,
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(k) = args.snapshot_every {
        cfg.snapshot_every = Some(k);
    } else if args.snapshots {
        cfg.snapshot_every.get_or_insert(DEFAULT_SNAPSHOT_EVERY);
    }
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("config.toml"), toml::to_string(&cfg)?)?;

    let exp = run_experiment(&cfg, dataset)?;
    for run in &exp.runs {
        run.model.save(args.out.join(format!("checkpoint-seed{}.json", run.seed)))?;
        let mut w = csv_writer(&args.out.join(format!("schedule-seed{}.csv", run.seed)))?;
        for rec in &run.trace {
            w.serialize(rec)?;
        }
        w.flush()?;
        if let Some(series) = &run.snapshots {
            write_json(&args.out.join(format!("snapshots-seed{}.json", run.seed)), series)?;
        }
    }
    write_json(&args.out.join("metrics.json"), &exp.report)?;

    let r = &exp.report;
    match (r.test_mean, r.test_std) {
        (Some(m), Some(s)) => println!("test {}: {m:.4} ± {s:.4} over {} seeds", r.metric, r.runs.len()),
        _ => println!("validation {}: {:.4} ± {:.4} over {} seeds", r.metric, r.val_mean, r.val_std, r.runs.len()),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    split: &'static str,
    metric: &'static str,
    value: f64,
    loss: f64,
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = cfg.load_dataset()?;
    let model = HopGat::load(&args.checkpoint)?;
    let e = evaluate(&model, &dataset, args.split.into())?;
    let report = EvalReport {
        split: match args.split {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        },
        metric: metric_name(&dataset),
        value: e.metric,
        loss: e.loss,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = cfg.load_dataset()?;
    let buckets = analyze_hops(&dataset, args.max_hop)?;
    fs::create_dir_all(&args.out)?;
    let mut w = csv_writer(&args.out.join("consistency.csv"))?;
    w.write_record(["hop", "saturated", "pairs", "same_label", "rate"])?;
    println!("hop\tpairs\trate");
    for b in &buckets {
        let rate = b.rate().map_or(String::new(), |r| format!("{r:.6}"));
        let hop = if b.saturated { format!(">={}", b.hop) } else { b.hop.to_string() };
        w.write_record([
            b.hop.to_string(),
            b.saturated.to_string(),
            b.pairs.to_string(),
            b.same_label.to_string(),
            rate.clone(),
        ])?;
        println!("{hop}\t{}\t{rate}", b.pairs);
    }
    w.flush()?;
    let points = buckets.iter().filter_map(|b| b.rate().map(|r| (b.hop as f64, r))).collect();
    line_chart(
        &args.out.join("consistency.svg"),
        "Label consistency by hop",
        "hop distance",
        "same-label fraction",
        &[Series { name: "consistency", points }],
    )?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn export_hist(args: HistArgs) -> Result<()> {
    let text = fs::read_to_string(&args.snapshots).with_context(|| format!("reading {}", args.snapshots.display()))?;
    let series: SnapshotSeries = serde_json::from_str(&text)?;
    let layer = match args.layer {
        Some(l) => l,
        None => series.snapshots.first().map_or(0, |s| s.logits.len().saturating_sub(1)),
    };
    let hists = export_attention_hist(&series, layer, args.head, args.bins)?;
    fs::create_dir_all(&args.out)?;

    let mut w = csv_writer(&args.out.join("hist.csv"))?;
    w.write_record(["epoch", "bucket", "bin_lo", "bin_hi", "count"])?;
    let mut m = csv_writer(&args.out.join("bucket-means.csv"))?;
    m.write_record(["epoch", "hop0_mean", "near_mean", "far_mean", "hop0_count", "near_count", "far_count"])?;
    for h in &hists {
        let hist = &h.histogram;
        let width = (hist.hi - hist.lo) / args.bins as f64;
        for (b, counts) in hist.counts.iter().enumerate() {
            for (k, c) in counts.iter().enumerate() {
                let lo = hist.lo + k as f64 * width;
                w.write_record([
                    h.epoch.to_string(),
                    BUCKET_NAMES[b].into(),
                    lo.to_string(),
                    (lo + width).to_string(),
                    c.to_string(),
                ])?;
            }
        }
        let mut row = vec![h.epoch.to_string()];
        row.extend(h.stats.iter().map(|s| s.mean.to_string()));
        row.extend(h.stats.iter().map(|s| s.count.to_string()));
        m.write_record(row)?;
    }
    w.flush()?;
    m.flush()?;

    let last = hists.last().expect("export returns one entry per snapshot");
    let width = (last.histogram.hi - last.histogram.lo) / args.bins as f64;
    let hist_series: Vec<Series> = BUCKET_NAMES
        .iter()
        .enumerate()
        .map(|(b, name)| Series {
            name,
            points: last.histogram.counts[b]
                .iter()
                .enumerate()
                .map(|(k, &c)| (last.histogram.lo + (k as f64 + 0.5) * width, c as f64))
                .collect(),
        })
        .collect();
    line_chart(
        &args.out.join("hist-final.svg"),
        &format!("Raw logits, layer {layer} head {}, epoch {}", args.head, last.epoch),
        "logit",
        "pairs",
        &hist_series,
    )?;
    let mean_series: Vec<Series> = BUCKET_NAMES
        .iter()
        .enumerate()
        .map(|(b, name)| Series { name, points: hists.iter().map(|h| (h.epoch as f64, h.stats[b].mean)).collect() })
        .collect();
    line_chart(
        &args.out.join("bucket-means.svg"),
        &format!("Mean raw logit by hop bucket, layer {layer} head {}", args.head),
        "epoch",
        "mean logit",
        &mean_series,
    )?;
    let means: Vec<String> = last.stats.iter().map(|s| format!("{:.4}", s.mean)).collect();
    println!("epoch {} bucket means (hop0, near, far): {}", last.epoch, means.join(", "));
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    label_rate: f64,
    arm: &'static str,
    visible_labels: usize,
    metric: String,
    test_mean: Option<f64>,
    test_std: Option<f64>,
    val_mean: f64,
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if args.rates.is_empty() {
        bail!("no label rates given");
    }
    let dataset = cfg.load_dataset()?;
    fs::create_dir_all(&args.out)?;
    let arms = [("hopgat", cfg.clone()), ("baseline", cfg.as_baseline())];
    let mut rows = Vec::new();
    for &rate in &args.rates {
        for (arm, base) in &arms {
            let run_cfg = ExperimentConfig { label_rate: rate, ..base.clone() };
            run_cfg.validate()?;
            let r = run_experiment(&run_cfg, dataset.clone())?.report;
            println!(
                "rate {rate:.3} {arm:>8}: {} {:.4} ± {:.4}",
                r.metric,
                r.test_mean.unwrap_or(r.val_mean),
                r.test_std.unwrap_or(r.val_std)
            );
            rows.push(SweepRow {
                label_rate: rate,
                arm,
                visible_labels: r.visible_labels,
                metric: r.metric,
                test_mean: r.test_mean,
                test_std: r.test_std,
                val_mean: r.val_mean,
            });
        }
    }
    let mut w = csv_writer(&args.out.join("sweep.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let series: Vec<Series> = arms
        .iter()
        .map(|(arm, _)| Series {
            name: arm,
            points: rows
                .iter()
                .filter(|r| r.arm == *arm)
                .map(|r| (r.label_rate, r.test_mean.unwrap_or(r.val_mean)))
                .collect(),
        })
        .collect();
    line_chart(&args.out.join("sweep.svg"), "Test metric by label rate", "label rate", &rows[0].metric, &series)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::AnalyzeHops(a) => analyze(a),
        Command::ExportAttentionHist(a) => export_hist(a),
        Command::SweepLabelRates(a) => sweep(a),
    }
}
