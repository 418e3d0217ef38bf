use std::sync::Arc;

use crate::error::{config_err, Result};
use crate::graph::Labels;
use crate::tensor::{Tape, Tensor, Var};

/// Softmax cross-entropy (single-label) or per-label sigmoid cross-entropy
/// (multi-label), averaged over `nodes`.
pub fn classification_loss(tape: &mut Tape, scores: Var, labels: &Labels, nodes: &[usize]) -> Result<Var> {
    if nodes.is_empty() {
        return Err(config_err("classification loss over an empty node set"));
    }
    let rows: Arc<[usize]> = Arc::from(nodes);
    match labels {
        Labels::Single { classes, .. } => {
            let picked: Arc<[usize]> = nodes.iter().map(|&i| classes[i]).collect();
            tape.softmax_cross_entropy(scores, rows, picked)
        }
        Labels::Multi { num_labels, targets } => {
            let picked: Arc<[f64]> = nodes
                .iter()
                .flat_map(|&i| targets[i * num_labels..(i + 1) * num_labels].iter().map(|&t| f64::from(t)))
                .collect();
            tape.sigmoid_cross_entropy(scores, rows, picked)
        }
    }
}

/// Fraction of `nodes` whose arg-max score equals their class. Ties go to
/// the lowest class index.
pub fn accuracy(scores: &Tensor, classes: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(config_err("accuracy over an empty node set"));
    }
    let hits = nodes
        .iter()
        .filter(|&&i| {
            let row = scores.row(i);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == classes[i]
        })
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Pooled true-positive, false-positive and false-negative counts with a
/// 0.5 probability threshold (positive logit).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl F1Counts {
    pub fn add(&mut self, scores: &Tensor, num_labels: usize, targets: &[u8], nodes: &[usize]) {
        for &i in nodes {
            for (c, &s) in scores.row(i).iter().enumerate() {
                let pred = s > 0.0;
                let truth = targets[i * num_labels + c] == 1;
                match (pred, truth) {
                    (true, true) => self.tp += 1,
                    (true, false) => self.fp += 1,
                    (false, true) => self.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }

    /// Micro-F1; a zero denominator (no positives predicted or present)
    /// counts as a perfect score and is logged.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            log::warn!("micro-F1 has no positive predictions or labels; reporting 1.0");
            return 1.0;
        }
        2.0 * self.tp as f64 / denom as f64
    }
}

pub fn micro_f1(scores: &Tensor, num_labels: usize, targets: &[u8], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(config_err("micro-F1 over an empty node set"));
    }
    let mut counts = F1Counts::default();
    counts.add(scores, num_labels, targets, nodes);
    Ok(counts.f1())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn accuracy_cases() {
        let s = Tensor::from_rows(&[[2.0, 1.0], [0.0, 3.0], [1.0, 1.0]]).unwrap();
        assert_eq!(accuracy(&s, &[0, 1, 0], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&s, &[1, 1, 1], &[0, 1, 2]).unwrap(), 1.0 / 3.0);
        assert!(accuracy(&s, &[0, 1, 0], &[]).is_err());
    }

    #[test]
    fn f1_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, l) = (20, 5);
        let scores = Tensor::from_fn(n, l, || rng.random_range(-1.0..1.0));
        let targets: Vec<u8> = (0..n * l).map(|_| u8::from(rng.random::<bool>())).collect();
        let nodes: Vec<usize> = (0..n).collect();
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for c in 0..l {
                let p = 1.0 / (1.0 + (-scores.get(i, c)).exp()) > 0.5;
                let t = targets[i * l + c] == 1;
                if p && t {
                    tp += 1.0;
                } else if p {
                    fp += 1.0;
                } else if t {
                    fn_ += 1.0;
                }
            }
        }
        let precision = tp / (tp + fp);
        let recall = tp / (tp + fn_);
        let want = 2.0 * precision * recall / (precision + recall);
        assert!((micro_f1(&scores, l, &targets, &nodes).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn all_negative_f1_is_one() {
        let scores = Tensor::filled(3, 2, -1.0);
        assert_eq!(micro_f1(&scores, 2, &[0; 6], &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn loss_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores = Tensor::from_fn(6, 4, || rng.random_range(-2.0..2.0));
        let classes = vec![0, 3, 1, 2, 2, 0];
        let nodes = [1, 2, 5];
        let labels = Labels::Single { num_classes: 4, classes: classes.clone() };
        let mut tape = Tape::new();
        let s = tape.constant(scores.clone());
        let l = classification_loss(&mut tape, s, &labels, &nodes).unwrap();
        let want: f64 = nodes
            .iter()
            .map(|&i| {
                let z: f64 = scores.row(i).iter().map(|v| v.exp()).sum();
                -(scores.get(i, classes[i]).exp() / z).ln()
            })
            .sum::<f64>()
            / 3.0;
        assert!((tape.item(l) - want).abs() < 1e-12);

        let targets: Vec<u8> = (0..24).map(|k| u8::from(k % 3 == 0)).collect();
        let multi = Labels::Multi { num_labels: 4, targets: targets.clone() };
        let l = classification_loss(&mut tape, s, &multi, &nodes).unwrap();
        let mut want = 0.0;
        for &i in &nodes {
            for c in 0..4 {
                let p = 1.0 / (1.0 + (-scores.get(i, c)).exp());
                let y = f64::from(targets[i * 4 + c]);
                want -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        assert!((tape.item(l) - want / 12.0).abs() < 1e-12);

        let uniform = tape.constant(Tensor::zeros(6, 4));
        let l = classification_loss(&mut tape, uniform, &labels, &nodes).unwrap();
        assert!((tape.item(l) - 4f64.ln()).abs() < 1e-12);
        assert!(classification_loss(&mut tape, s, &labels, &[]).is_err());
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
