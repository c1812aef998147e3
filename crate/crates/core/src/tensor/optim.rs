//! Adam with coupled L2 weight decay and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::data::Augment;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Off by default; only valid for image-shaped data.
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay_epochs: vec![10, 30, 50],
            decay_factor: 0.1,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            augment: Augment::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("Adam constants out of range".into()));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based): the base rate times
/// `decay_factor` for every decay boundary already reached.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    let decays = config.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    config.learning_rate * config.decay_factor.powi(decays as i32)
}

/// First/second moment accumulators over a flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Applies one update to each `(values, grads)` pair, treating the pairs
    /// as one concatenated vector. Fails without touching any state if a
    /// gradient is non-finite.
    pub fn step(
        &mut self,
        pairs: &mut [(&mut [f64], &[f64])],
        config: &TrainConfig,
        weight_decay: f64,
        lr: f64,
    ) -> Result<()> {
        let total: usize = pairs.iter().map(|(_, g)| g.len()).sum();
        for (i, (p, g)) in pairs.iter().enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim(format!("parameter block {i}"), p.len(), g.len()));
            }
            if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("gradient block {i} entry {pos}")));
            }
        }
        if self.m.is_empty() && self.v.is_empty() {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        } else if self.m.len() != total {
            return Err(Error::State(format!(
                "optimizer tracks {} values, update has {total}",
                self.m.len()
            )));
        }

        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let mut offset = 0;
        for (values, grads) in pairs.iter_mut() {
            let m = &mut self.m[offset..offset + grads.len()];
            let v = &mut self.v[offset..offset + grads.len()];
            for (((theta, &g), m), v) in values.iter_mut().zip(grads.iter()).zip(m).zip(v) {
                let g = if weight_decay != 0.0 {
                    g + weight_decay * *theta
                } else {
                    g
                };
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
            }
            offset += grads.len();
        }
        Ok(())
    }
}
