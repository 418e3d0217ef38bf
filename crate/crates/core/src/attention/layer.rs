use super::{AttentionKind, PairList};
use crate::error::Result;
use crate::tensor::{leaky_relu, Tape, Var};

/// Raw attention logit from the three scalar scorer outputs of one pair.
///
/// `center` is `a_c(Wh_i)`, `neighbor` is `a_n(Wh_j)` and `hop` is
/// `a_he(he[hv_ij])`. With one output unit per scorer the concatenation in
/// the addition score collapses to `hop * (center + neighbor)`.
pub fn pair_logit_value(kind: AttentionKind, center: f64, neighbor: f64, hop: f64, slope: f64) -> f64 {
    match kind {
        AttentionKind::Baseline => leaky_relu(center + neighbor, slope),
        AttentionKind::Product => center * (neighbor + hop),
        AttentionKind::Addition => leaky_relu(hop * (center + neighbor), slope),
    }
}

/// Tape version of [`pair_logit_value`] over a pair list.
///
/// `center` and `neighbor` are `N x 1` per-node scores; `hop` is the
/// `(max_hv + 1) x 1` hop-scorer output, ignored by the baseline.
pub fn pair_logits(
    tape: &mut Tape,
    kind: AttentionKind,
    pairs: &PairList,
    center: Var,
    neighbor: Var,
    hop: Option<Var>,
    slope: f64,
) -> Result<Var> {
    let c = tape.gather(center, pairs.centers.clone())?;
    let n = tape.gather(neighbor, pairs.neighbors.clone())?;
    let hop_scores = |tape: &mut Tape| -> Result<Var> {
        let h = hop.expect("hop-aware attention needs hop scores");
        tape.gather(h, pairs.hops.clone())
    };
    Ok(match kind {
        AttentionKind::Baseline => {
            let s = tape.add(c, n)?;
            tape.leaky_relu(s, slope)
        }
        AttentionKind::Product => {
            let h = hop_scores(tape)?;
            let s = tape.add(n, h)?;
            tape.mul(c, s)?
        }
        AttentionKind::Addition => {
            let h = hop_scores(tape)?;
            let s = tape.add(c, n)?;
            let gated = tape.mul(h, s)?;
            tape.leaky_relu(gated, slope)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_cases() {
        use AttentionKind::*;
        // zero centre score annihilates the product score
        assert_eq!(pair_logit_value(Product, 0.0, 3.0, -2.0, 0.2), 0.0);
        // closed hop gate
        assert_eq!(pair_logit_value(Addition, 1.5, 0.7, 0.0, 0.2), 0.0);
        // positive inputs pass LeakyReLU unchanged
        assert_eq!(pair_logit_value(Addition, 0.5, 0.25, 2.0, 0.2), 1.5);
        assert_eq!(pair_logit_value(Baseline, 0.0, 0.0, 9.0, 0.2), 0.0);
        assert!((pair_logit_value(Baseline, -1.0, 0.5, 0.0, 0.2) + 0.1).abs() < 1e-15);
    }
}
