use serde::{Deserialize, Serialize};

use super::error::{NnError, Result};
use super::params::ParameterStore;

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    #[serde(default)]
    pub momentum: f32,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f32, momentum: f32) -> Self {
        Self {
            learning_rate,
            momentum,
        }
    }

    /// A zero learning rate is accepted so that fixed-point runs are expressible.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: OptimizerConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.cfg
    }

    /// `v ← m·v + g; w ← w − lr·v`, then clears the gradients.
    pub fn step(&mut self, store: &mut ParameterStore) {
        if self.velocity.len() != store.len() {
            self.velocity = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        let (lr, m) = (self.cfg.learning_rate, self.cfg.momentum);
        for (p, v) in store.params_mut().iter_mut().zip(&mut self.velocity) {
            let g = p.grad.data_mut();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                v[i] = m * v[i] + g[i];
                w[i] -= lr * v[i];
                g[i] = 0.0;
            }
        }
    }
}
