use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        match Self::default() {
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                eps,
            },
            other => other,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { learning_rate } | OptimizerConfig::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }

    pub fn build(&self) -> Optimizer {
        Optimizer {
            config: *self,
            step: 0,
            moments: Vec::new(),
        }
    }
}

/// Stateful optimizer; Adam keeps first/second moment estimates per
/// parameter in registration order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        check_gradients(store)?;
        match self.config {
            OptimizerConfig::Sgd { learning_rate } => sgd_step(store, learning_rate),
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                eps,
            } => {
                if self.moments.is_empty() {
                    self.moments = store
                        .iter()
                        .map(|(_, p)| (vec![0.0; p.tensor.len()], vec![0.0; p.tensor.len()]))
                        .collect();
                }
                self.step += 1;
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (p, (m, v)) in store.iter_mut().zip(self.moments.iter_mut()) {
                    if !p.trainable {
                        continue;
                    }
                    let grad = p.grad.data().to_vec();
                    for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                        let g = grad[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sgd_step(store: &mut ParamStore, learning_rate: f64) {
    for p in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let grad = p.grad.data().to_vec();
        for (w, g) in p.tensor.data_mut().iter_mut().zip(grad) {
            *w -= learning_rate * g;
        }
    }
}

/// Rejects the step if any trainable gradient is non-finite, naming the
/// offending parameter.
pub fn check_gradients(store: &ParamStore) -> Result<()> {
    for (_, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        if let Some((index, &value)) = p.grad.data().iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
                index,
                value,
            });
        }
    }
    Ok(())
}
