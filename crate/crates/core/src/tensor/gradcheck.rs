//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates the forward closure, so it stays
//! independent of every backward rule it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Magnitude below which errors are measured in absolute rather than
/// relative terms. Rounding noise of a central difference is about
/// `eps * |f| / FD_STEP`, i.e. 1e-10 for unit-scale losses.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// (input index, flat entry) of the worst entry.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Compares the tape gradient of a scalar function against central
/// differences for every entry of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let mut report = GradReport { max_rel_error: 0.0, worst: (0, 0), entries_checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        for e in 0..input.len() {
            let x = input.data()[e];
            work[k].data_mut()[e] = x + FD_STEP;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = x - FD_STEP;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = x;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic.data()[e], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (k, e);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
