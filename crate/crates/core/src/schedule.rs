//! Simulated-annealing schedule for the loss mixing weight.
//!
//! The temperature decays geometrically once per epoch until the next step
//! would fall below `temp_fin`; from then on it stays put and the mixing
//! weight is clamped at `gamma_str`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub temp_ini: f64,
    pub temp_fin: f64,
    /// Per-epoch multiplicative decay `epsilon`.
    pub decay: f64,
    /// Saturation clamp on gamma.
    pub gamma_str: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { temp_ini: 100.0, temp_fin: 1.0, decay: 0.85, gamma_str: 0.25 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temp_fin > 0.0 && self.temp_ini >= self.temp_fin && self.temp_ini.is_finite()) {
            return Err(config_err(format!(
                "need temp_ini >= temp_fin > 0, got {} and {}",
                self.temp_ini, self.temp_fin
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(config_err(format!("decay {} outside (0, 1)", self.decay)));
        }
        if !(self.gamma_str > 0.0 && self.gamma_str <= 1.0) {
            return Err(config_err(format!("gamma_str {} outside (0, 1]", self.gamma_str)));
        }
        Ok(())
    }

    /// Number of temperature steps after which the schedule is saturated:
    /// `ceil(log(temp_fin / temp_ini) / log(decay))`.
    pub fn saturation_steps(&self) -> usize {
        ((self.temp_fin / self.temp_ini).ln() / self.decay.ln()).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub temp: f64,
    pub saturated: bool,
    pub gamma: f64,
}

impl ScheduleState {
    pub fn new(cfg: &ScheduleConfig) -> Self {
        Self { temp: cfg.temp_ini, saturated: false, gamma: 0.0 }
    }

    pub fn step_temperature(&mut self, cfg: &ScheduleConfig) {
        let next = self.temp * cfg.decay;
        if next >= cfg.temp_fin {
            self.temp = next;
        } else {
            self.saturated = true;
        }
    }

    /// Computes and stores gamma for the given attention loss value.
    pub fn compute_gamma(&mut self, l_att: f64, cfg: &ScheduleConfig) -> f64 {
        self.gamma = gamma_value(l_att, self.temp, self.saturated, cfg.gamma_str);
        self.gamma
    }
}

/// `exp(-(1 / l_att) / temp)`, clamped at `gamma_str` once saturated.
/// A zero attention loss gives zero.
pub fn gamma_value(l_att: f64, temp: f64, saturated: bool, gamma_str: f64) -> f64 {
    if l_att <= 0.0 {
        return 0.0;
    }
    let raw = (-(1.0 / l_att) / temp).exp();
    if saturated {
        raw.min(gamma_str)
    } else {
        raw
    }
}

pub fn total_loss(l_cls: f64, l_att: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * l_cls + gamma * l_att
}
