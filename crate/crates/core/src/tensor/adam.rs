use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A named trainable tensor and its pending gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    /// Whether L2 weight decay applies (weight matrices yes, biases no).
    pub decay: bool,
}

/// Ordered collection of parameters. Order is fixed at construction and
/// shared with the optimizer's moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> usize {
        self.params.push(Param { name: name.into(), value, grad: None, decay });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Records every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Moves gradients out of a backward pass. Parameters the loss never
    /// reached get an explicit zero gradient.
    pub fn load_grads(&mut self, grads: &mut Gradients, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()));
            match &mut p.grad {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.005, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = |p: &Param| Tensor::zeros(p.value.rows(), p.value.cols());
        Self { config, step: 0, first: params.iter().map(zeros).collect(), second: params.iter().map(zeros).collect() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the pending gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Usage(format!("parameter `{}` has no gradient", p.name)));
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, p) in params.params.iter_mut().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let (m, v) = (self.first[k].data_mut(), self.second[k].data_mut());
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
