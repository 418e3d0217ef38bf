use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hopgat::attention::HopGat;
use hopgat::graph::{generate_sbm, Dataset, SbmConfig, Split};
use hopgat::train::{evaluate, ExperimentConfig, ExperimentReport};

fn hopgat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopgat")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hopgat(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path) -> String {
    let g = generate_sbm(&SbmConfig { nodes_per_block: 40, p_in: 0.15, ..SbmConfig::default() }).unwrap();
    let path = dir.join("sbm.json");
    Dataset::single(g).save(&path).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let stdout = ok(&[
        "train",
        "--dataset",
        &data,
        "--max-epochs",
        "12",
        "--seeds",
        "0,4",
        "--snapshot-every",
        "5",
        "--out",
        out_s,
    ]);
    assert!(stdout.contains("test accuracy"));
    for f in [
        "config.toml",
        "metrics.json",
        "checkpoint-seed0.json",
        "checkpoint-seed4.json",
        "schedule-seed0.csv",
        "snapshots-seed4.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 2);

    let trace = fs::read_to_string(out.join("schedule-seed0.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "epoch,temp,gamma,saturated,l_cls,l_att,val_loss,val_metric");
    assert_eq!(lines.count(), report.runs[0].epochs_run);

    let resolved: ExperimentConfig = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(resolved.seeds, vec![0, 4]);
    assert_eq!(resolved.snapshot_every, Some(5));

    let ckpt = out.join("checkpoint-seed4.json");
    let eval = ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", &data]);
    let value: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(value["metric"], "accuracy");
    assert_eq!(value["value"].as_f64(), report.runs[1].test_metric);
    let model = HopGat::load(&ckpt).unwrap();
    let direct = evaluate(&model, &Dataset::load(&data).unwrap(), Split::Val).unwrap();
    let val = ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", &data, "--split", "val"]);
    let value: serde_json::Value = serde_json::from_str(&val).unwrap();
    assert_eq!(value["value"].as_f64(), Some(direct.metric));

    let hist = dir.path().join("hist");
    let stdout = ok(&[
        "export-attention-hist",
        "--snapshots",
        out.join("snapshots-seed4.json").to_str().unwrap(),
        "--bins",
        "10",
        "--out",
        hist.to_str().unwrap(),
    ]);
    assert!(stdout.contains("bucket means"));
    let means = fs::read_to_string(hist.join("bucket-means.csv")).unwrap();
    // snapshots at epochs 0, 5, 10
    assert_eq!(means.lines().count(), 4);
    let counts = fs::read_to_string(hist.join("hist.csv")).unwrap();
    assert_eq!(counts.lines().count(), 1 + 3 * 3 * 10);
    for f in ["hist-final.svg", "bucket-means.svg"] {
        assert!(fs::read_to_string(hist.join(f)).unwrap().starts_with("<svg"));
    }
}

#[test]
fn snapshots_flag_defaults_to_ten_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--dataset",
        &data,
        "--max-epochs",
        "21",
        "--seeds",
        "1",
        "--snapshots",
        "--out",
        out.to_str().unwrap(),
    ]);
    let series: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("snapshots-seed1.json")).unwrap()).unwrap();
    let epochs: Vec<u64> =
        series["snapshots"].as_array().unwrap().iter().map(|s| s["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, vec![0, 10, 20]);
}

#[test]
fn config_file_overrides_preset_and_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "label_rate = 0.5\nmax_epochs = 4\n[schedule]\ndecay = 0.5\n").unwrap();
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        &data,
        "--seeds",
        "2",
        "--max-epochs",
        "3",
        "--baseline",
        "--out",
        out.to_str().unwrap(),
    ]);
    let resolved: ExperimentConfig = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    let sbm = ExperimentConfig::preset("sbm").unwrap();
    assert_eq!(resolved.label_rate, 0.5);
    assert_eq!(resolved.max_epochs, 3);
    assert_eq!(resolved.schedule.decay, 0.5);
    assert_eq!(resolved.schedule.temp_ini, sbm.schedule.temp_ini);
    assert_eq!(resolved.widths, sbm.widths);
    assert!(!resolved.supervision);
    let trace = fs::read_to_string(out.join("schedule-seed2.csv")).unwrap();
    assert!(trace.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0.0")));
}

#[test]
fn analyze_hops_writes_table_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("hops");
    let stdout = ok(&["analyze-hops", "--dataset", &data, "--max-hop", "4", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains(">=4"));
    let table = fs::read_to_string(out.join("consistency.csv")).unwrap();
    let rows: Vec<Vec<String>> = table.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 4);
    let rate = |k: usize| rows[k][4].parse::<f64>().unwrap();
    assert!(rate(0) > rate(3));
    assert!(fs::read_to_string(out.join("consistency.svg")).unwrap().contains("Label consistency"));
}

#[test]
fn sweep_runs_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("sweep");
    ok(&[
        "sweep-label-rates",
        "--dataset",
        &data,
        "--rates",
        "0.25,1",
        "--max-epochs",
        "3",
        "--seeds",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "label_rate,arm,visible_labels,metric,test_mean,test_std,val_mean");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0.25,hopgat,8,"));
    assert!(lines[4].starts_with("1.0,baseline,32,"));
    assert!(out.join("sweep.svg").exists());
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("run");
    ok(&["train", "--dataset", &data, "--max-epochs", "2", "--seeds", "0", "--out", out.to_str().unwrap()]);
    let missing = hopgat(&["export-attention-hist", "--snapshots", out.join("snapshots-seed0.json").to_str().unwrap()]);
    assert!(!missing.status.success());

    let bad_rate = hopgat(&["train", "--dataset", &data, "--label-rate", "0", "--out", out.to_str().unwrap()]);
    assert!(!bad_rate.status.success());
    assert!(String::from_utf8_lossy(&bad_rate.stderr).contains("label rate"));

    assert!(!hopgat(&["train", "--preset", "imdb"]).status.success());

    let bad_key = dir.path().join("bad.toml");
    fs::write(&bad_key, "max_hvv = 3").unwrap();
    assert!(!hopgat(&["train", "--config", bad_key.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());

    let ckpt = out.join("checkpoint-seed0.json");
    let other = generate_sbm(&SbmConfig { blocks: 3, ..SbmConfig::default() }).unwrap();
    let other_path = dir.path().join("other.json");
    Dataset::single(other).save(&other_path).unwrap();
    assert!(!hopgat(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", other_path.to_str().unwrap()])
        .status
        .success());
}
