//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails.
//!
//! The Cora stretch check runs only when `HOPGAT_CORA` points at a converted
//! Cora container.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{floyd_warshall, random_graph, random_tensor};
use hopgat::attention::{AttentionKind, GraphInput, HopGat, ModelConfig};
use hopgat::graph::{compute_hop_matrix, Dataset, Labels};
use hopgat::hop_codec::HopEncodingTable;
use hopgat::schedule::{gamma_value, ScheduleConfig, ScheduleState};
use hopgat::supervision::{attention_loss, ground_truth, sample_pairs};
use hopgat::tensor::gradcheck::check_gradients;
use hopgat::tensor::{Tape, Tensor, Var};
use hopgat::train::analysis::ProbeSet;
use hopgat::train::{logit_bucket_stats, run_experiment, train_run, Experiment, ExperimentConfig, Prepared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-5;
const GRAD_SEEDS: u64 = 20;
const HOP_GRAPHS: u64 = 200;
const SBM_FLOOR: f64 = 0.80;
const SBM_MARGIN: f64 = -0.01;
const EARLY_GAMMA: f64 = 0.9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.1}s (limit {}s)", o.detail, took.as_secs_f64(), limit.as_secs());
    o.pass &= took <= limit;
    o
}

type ScalarFn = Box<dyn Fn(&mut Tape, &[Var]) -> hopgat::Result<Var>>;

/// Contracts `y` with a fixed random weight so every output entry matters.
fn contract(tape: &mut Tape, y: Var, seed: u64) -> hopgat::Result<Var> {
    let [r, c] = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(random_tensor(r, c, &mut rng));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, ScalarFn)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor(3, 4, &mut rng);
    let b = random_tensor(3, 4, &mut rng);
    let m = random_tensor(4, 2, &mut rng);
    let col = random_tensor(7, 1, &mut rng);
    let mask: Vec<bool> = (0..12).map(|k| k % 4 == 0 || rng.random::<f64>() < 0.6).collect();
    let idx: Arc<[usize]> = (0..9).map(|_| rng.random_range(0..12)).collect();
    let offsets: Arc<[usize]> = Arc::from(vec![0, 2, 3, 7]);
    let targets: Arc<[usize]> = (0..7).map(|_| rng.random_range(0..3)).collect();
    let sources: Arc<[usize]> = (0..7).map(|_| rng.random_range(0..4)).collect();
    let rows: Arc<[usize]> = Arc::from(vec![0, 2]);
    let classes: Arc<[usize]> = (0..2).map(|_| rng.random_range(0..4)).collect();
    let bits: Arc<[f64]> = (0..8).map(|_| f64::from(rng.random::<bool>())).collect();
    let s = seed;
    let ab = vec![a.clone(), b.clone()];
    let one = vec![a.clone()];
    let mut cases: Vec<(&'static str, Vec<Tensor>, ScalarFn)> = vec![
        (
            "matmul",
            vec![a.clone(), m],
            Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                contract(t, y, s)
            }),
        ),
        (
            "add",
            ab.clone(),
            Box::new(move |t, v| {
                let y = t.add(v[0], v[1])?;
                contract(t, y, s)
            }),
        ),
        (
            "sub",
            ab.clone(),
            Box::new(move |t, v| {
                let y = t.sub(v[0], v[1])?;
                contract(t, y, s)
            }),
        ),
        (
            "mul",
            ab.clone(),
            Box::new(move |t, v| {
                let y = t.mul(v[0], v[1])?;
                contract(t, y, s)
            }),
        ),
        (
            "scale",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.scale(v[0], -1.7);
                contract(t, y, s)
            }),
        ),
        (
            "leaky_relu",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.leaky_relu(v[0], 0.2);
                contract(t, y, s)
            }),
        ),
        (
            "elu",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.elu(v[0]);
                contract(t, y, s)
            }),
        ),
        (
            "sigmoid",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.sigmoid(v[0]);
                contract(t, y, s)
            }),
        ),
        (
            "exp",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.exp(v[0]);
                contract(t, y, s)
            }),
        ),
        (
            "sum",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.sum(v[0]);
                contract(t, y, s)
            }),
        ),
        (
            "mean",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.mean(v[0])?;
                contract(t, y, s)
            }),
        ),
        (
            "concat_cols",
            ab.clone(),
            Box::new(move |t, v| {
                let y = t.concat_cols(&[v[0], v[1]])?;
                contract(t, y, s)
            }),
        ),
        (
            "dropout",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.dropout(v[0], 0.4, s, true)?;
                contract(t, y, s)
            }),
        ),
        (
            "masked_softmax",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.masked_softmax(v[0], &mask)?;
                contract(t, y, s)
            }),
        ),
        (
            "gather",
            one.clone(),
            Box::new(move |t, v| {
                let y = t.gather(v[0], idx.clone())?;
                contract(t, y, s)
            }),
        ),
        (
            "segment_softmax",
            vec![col.clone()],
            Box::new({
                let offsets = offsets.clone();
                move |t, v| {
                    let y = t.segment_softmax(v[0], offsets.clone())?;
                    contract(t, y, s)
                }
            }),
        ),
        (
            "aggregate",
            vec![col, b.transpose()],
            Box::new(move |t, v| {
                let y = t.aggregate(v[0], v[1], targets.clone(), sources.clone(), 3)?;
                contract(t, y, s)
            }),
        ),
        (
            "softmax_cross_entropy",
            one.clone(),
            Box::new(move |t, v| t.softmax_cross_entropy(v[0], rows.clone(), classes.clone())),
        ),
    ];
    cases.push((
        "sigmoid_cross_entropy",
        one,
        Box::new(move |t, v| t.sigmoid_cross_entropy(v[0], Arc::from(vec![1, 2]), bits.clone())),
    ));
    cases
}

fn full_loss_error(seed: u64, kind: AttentionKind) -> f64 {
    let g = random_graph(7, 0.35, 3, 3, seed);
    let cfg = ModelConfig::stacked(kind, 2, 3, &[2, 2, 1], &[3, 4, 3], [0.2, 0.1, 0.3], 0.2).unwrap();
    let model = HopGat::new(cfg, seed).unwrap();
    let input = GraphInput::new(&g, compute_hop_matrix(&g, 2).unwrap(), kind);
    let sample = sample_pairs(&input.hops, 0.5, seed).unwrap();
    let Labels::Single { classes, .. } = g.labels() else { unreachable!() };
    let classes: Arc<[usize]> = Arc::from(classes.clone());
    let rows: Arc<[usize]> = (0..7).collect();
    // Zero-initialised biases can put a dropped-out row exactly on the
    // LeakyReLU kink, so check at a jittered point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let params: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| {
            let mut t = p.value.clone();
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
            t
        })
        .collect();
    let gamma = gamma_value(0.4, 100.0 * 0.9f64.powi(seed as i32), false, 0.25);
    check_gradients(&params, |tape, vars| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = model.forward(tape, vars, &input, Some(&sample.pairs), true, &mut rng)?;
        let cls = tape.softmax_cross_entropy(out.scores, rows.clone(), classes.clone())?;
        let att = attention_loss(tape, &out.query_logits(), &sample.targets)?;
        let l2 = model.l2_penalty(tape, vars)?;
        let a = tape.scale(cls, 1.0 - gamma);
        let b = tape.scale(att, gamma);
        let c = tape.scale(l2, 5e-4);
        let ab = tape.add(a, b)?;
        tape.add(ab, c)
    })
    .unwrap()
    .max_rel_error
}

fn gradient_suite() -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for seed in 0..GRAD_SEEDS {
        for (name, inputs, f) in op_cases(seed) {
            let err = check_gradients(&inputs, f).unwrap().max_rel_error;
            checked += 1;
            if err > worst.0 {
                worst = (err, format!("{name} seed {seed}"));
            }
        }
        for kind in [AttentionKind::Baseline, AttentionKind::Product, AttentionKind::Addition] {
            let err = full_loss_error(seed, kind);
            checked += 1;
            if err > worst.0 {
                worst = (err, format!("full loss {kind:?} seed {seed}"));
            }
        }
    }
    outcome(
        worst.0 <= GRAD_TOL,
        format!("{checked} checks over {GRAD_SEEDS} seeds, max rel err {:.2e} ({})", worst.0, worst.1),
    )
}

fn hop_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for seed in 0..HOP_GRAPHS {
        let n = rng.random_range(1..=50);
        let p = rng.random_range(0.0..0.25);
        let max_hv = rng.random_range(1..=6);
        let g = random_graph(n, p, 1, 2, seed);
        let hops = compute_hop_matrix(&g, max_hv).unwrap();
        let d = floyd_warshall(n, g.edges());
        let ok = (0..n).all(|i| (0..n).all(|j| hops.get(i, j) == d[i][j].min(max_hv)));
        mismatches += usize::from(!ok);
    }
    outcome(mismatches == 0, format!("{HOP_GRAPHS} graphs, {mismatches} mismatches"))
}

fn exact_values() -> Outcome {
    let gt = [ground_truth(0, 2), ground_truth(1, 2), ground_truth(2, 2), ground_truth(5, 2)];
    let table = HopEncodingTable::build(8, 2).unwrap();
    let zero = table.lookup(0).unwrap();
    let encoding_ok = zero[..4].iter().all(|&v| v == 0.0) && zero[4..].iter().all(|&v| v == 1.0);
    let cfg = ScheduleConfig::default();
    let mut state = ScheduleState::new(&cfg);
    while !state.saturated {
        state.step_temperature(&cfg);
    }
    let clamped = [0.5, 2.0, 50.0, 1e6].map(|l| state.compute_gamma(l, &cfg));
    let pass = gt == [1.0, 0.0, -1.0, -1.0] && encoding_ok && clamped.iter().all(|&g| g <= 0.25) && clamped[3] == 0.25;
    outcome(pass, format!("ground truth {gt:?}, hv=0 encoding ok {encoding_ok}, saturated gamma {clamped:?}"))
}

fn sbm_config() -> ExperimentConfig {
    ExperimentConfig::preset("sbm").unwrap()
}

fn schedule_trace() -> Outcome {
    // The cora schedule saturates after 90 epochs, inside a short run.
    let cfg = ExperimentConfig {
        schedule: ScheduleConfig { decay: 0.95, ..ScheduleConfig::default() },
        max_epochs: 150,
        patience: 1000,
        ..sbm_config()
    };
    let dataset = cfg.load_dataset().unwrap();
    let run = train_run(&cfg, &Prepared::new(&cfg, dataset).unwrap(), 0).unwrap();
    let t = &run.trace;
    let early: Vec<_> = t.iter().take(5).collect();
    let early_ok = early.iter().all(|r| r.gamma > EARLY_GAMMA && r.l_att.is_some_and(|l| l >= 0.1));
    let annealing: Vec<f64> = t.iter().filter(|r| !r.saturated).map(|r| r.gamma).collect();
    let thirds: Vec<f64> =
        annealing.chunks(annealing.len().div_ceil(3)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let decreasing = thirds.windows(2).all(|w| w[1] < w[0]);
    let saturated: Vec<f64> = t.iter().filter(|r| r.saturated).map(|r| r.gamma).collect();
    let clamped = !saturated.is_empty() && saturated.iter().all(|&g| g <= 0.25);
    outcome(
        early_ok && decreasing && clamped,
        format!(
            "first gammas {:?}, annealing thirds {:?}, {} saturated epochs max gamma {:.3}",
            early.iter().map(|r| (r.gamma * 1e4).round() / 1e4).collect::<Vec<_>>(),
            thirds.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>(),
            saturated.len(),
            saturated.iter().copied().fold(0.0, f64::max)
        ),
    )
}

struct SbmRuns {
    hopgat: Experiment,
    gat: Experiment,
    elapsed: Duration,
    dataset: Dataset,
}

fn sbm_runs() -> SbmRuns {
    let start = Instant::now();
    let cfg = sbm_config();
    let dataset = cfg.load_dataset().unwrap();
    let hopgat = run_experiment(&cfg, dataset.clone()).unwrap();
    let gat = run_experiment(&cfg.as_baseline(), dataset.clone()).unwrap();
    SbmRuns { hopgat, gat, elapsed: start.elapsed(), dataset }
}

fn sbm_accuracy(runs: &SbmRuns) -> Outcome {
    let h = runs.hopgat.report.test_mean.unwrap();
    let g = runs.gat.report.test_mean.unwrap();
    let limit = Duration::from_secs(300);
    outcome(
        h >= SBM_FLOOR && h - g >= SBM_MARGIN && runs.elapsed <= limit,
        format!(
            "HopGAT {h:.4} ± {:.4}, GAT {g:.4} ± {:.4}, diff {:+.4}; {:.1}s (limit {}s)",
            runs.hopgat.report.test_std.unwrap(),
            runs.gat.report.test_std.unwrap(),
            h - g,
            runs.elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

/// hop0 - far gap of every last-layer head, and whether the three bucket
/// means are strictly ordered.
fn last_layer_gaps(exp: &Experiment, dataset: &Dataset) -> Vec<(f64, bool)> {
    let g = &dataset.graphs[0];
    let hops = compute_hop_matrix(g, 2).unwrap();
    let probe = ProbeSet::new(&hops, usize::MAX, 0);
    let mut out = Vec::new();
    for run in &exp.runs {
        let input = GraphInput::new(g, hops.clone(), run.model.config().kind());
        let stats = logit_bucket_stats(&run.model, &input, &probe).unwrap();
        for head in stats.last().unwrap() {
            let [h0, h1, far] = head.map(|b| b.mean);
            out.push((h0 - far, h0 > h1 && h1 > far));
        }
    }
    out
}

fn attention_separation(runs: &SbmRuns) -> Outcome {
    let hop = last_layer_gaps(&runs.hopgat, &runs.dataset);
    let base = last_layer_gaps(&runs.gat, &runs.dataset);
    let ordered = hop.iter().filter(|(_, o)| *o).count();
    let mean = |v: &[(f64, bool)]| v.iter().map(|(g, _)| g).sum::<f64>() / v.len() as f64;
    let (hm, bm) = (mean(&hop), mean(&base));
    outcome(
        ordered == hop.len() && bm < hm,
        format!(
            "{ordered}/{} last-layer heads ordered hop0 > hop1 > far; mean hop0-far gap HopGAT {hm:.3} vs GAT {bm:.3}",
            hop.len()
        ),
    )
}

fn cora_stretch() -> Option<Outcome> {
    let path = std::env::var_os("HOPGAT_CORA")?;
    let cfg =
        ExperimentConfig { dataset: Some(path.into()), seeds: vec![0], ..ExperimentConfig::preset("cora").unwrap() };
    Some(timed(Duration::from_secs(900), || {
        let dataset = cfg.load_dataset().unwrap();
        let exp = run_experiment(&cfg, dataset).unwrap();
        let acc = exp.report.test_mean.unwrap();
        outcome(acc >= 0.84, format!("test accuracy {acc:.4} (floor 0.84)"))
    }))
}

fn report(name: &str, o: &Outcome, gating: bool) -> bool {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let note = if gating { "" } else { " [stretch, not gating]" };
    println!("{tag} {name}{note}: {}", o.detail);
    o.pass || !gating
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report("gradient suite", &timed(Duration::from_secs(60), gradient_suite), true);
    ok &= report("hop oracle", &timed(Duration::from_secs(10), hop_oracle), true);
    ok &= report("exact formula values", &exact_values(), true);
    ok &= report("schedule trace shape", &schedule_trace(), true);
    let runs = sbm_runs();
    ok &= report("sbm sparse-label accuracy", &sbm_accuracy(&runs), true);
    ok &= report("attention separation", &attention_separation(&runs), true);
    match cora_stretch() {
        Some(o) => {
            report("cora full-label accuracy", &o, false);
        }
        None => {
            println!("SKIP cora full-label accuracy [stretch, not gating]: set HOPGAT_CORA to a converted container")
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
