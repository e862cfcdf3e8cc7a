use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optimizer and its hyperparameters. Update rules follow the Keras
/// conventions (epsilon added outside the square root; Adam folds the bias
/// correction into the step size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        learning_rate: f64,
    },
    Rmsprop {
        learning_rate: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_rho() -> f64 {
    0.9
}
fn default_epsilon() -> f64 {
    1e-7
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}

impl OptimizerKind {
    pub fn rmsprop(learning_rate: f64) -> Self {
        OptimizerKind::Rmsprop {
            learning_rate,
            rho: default_rho(),
            epsilon: default_epsilon(),
        }
    }

    /// Adam with beta1 = 0.9, beta2 = 0.95, epsilon = 1e-7.
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerKind::Adam {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { learning_rate }
            | OptimizerKind::Rmsprop { learning_rate, .. }
            | OptimizerKind::Adam { learning_rate, .. } => learning_rate,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        match &mut self {
            OptimizerKind::Sgd { learning_rate }
            | OptimizerKind::Rmsprop { learning_rate, .. }
            | OptimizerKind::Adam { learning_rate, .. } => *learning_rate = lr,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        match *self {
            OptimizerKind::Sgd { .. } => Ok(()),
            OptimizerKind::Rmsprop { rho, epsilon, .. } => {
                unit("rho", rho)?;
                positive("epsilon", epsilon)
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
                positive("epsilon", epsilon)
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

/// Optimizer state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, len: usize) -> Self {
        let (first, second) = match kind {
            OptimizerKind::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerKind::Rmsprop { .. } => (Vec::new(), vec![0.0; len]),
            OptimizerKind::Adam { .. } => (vec![0.0; len], vec![0.0; len]),
        };
        Self {
            kind,
            weight_decay,
            first,
            second,
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.steps += 1;
        let lr = self.kind.learning_rate();
        if self.weight_decay > 0.0 {
            // decoupled: shrink independently of the gradient
            let shrink = lr * self.weight_decay;
            for p in params.iter_mut() {
                *p -= shrink * *p;
            }
        }
        match self.kind {
            OptimizerKind::Sgd { .. } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Rmsprop { rho, epsilon, .. } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(self.second.iter_mut()) {
                    *v = rho * *v + (1.0 - rho) * g * g;
                    *p -= lr * g / (v.sqrt() + epsilon);
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                let t = self.steps as i32;
                let alpha = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= alpha * *m / (v.sqrt() + epsilon);
                }
            }
        }
    }
}
