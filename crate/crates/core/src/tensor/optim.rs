//! AdamW (decoupled weight decay) and Nadam (Nesterov-momentum Adam).

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Nadam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-7
}

impl OptimizerConfig {
    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate,
            weight_decay,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn nadam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Nadam,
            learning_rate,
            weight_decay: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Moment accumulators for every tensor of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect::<Vec<_>>()
        };
        Optimizer {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; frozen parameters and parameters without a gradient are
    /// left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}, got {} gradients",
                self.first.len(),
                store.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != store.entries()[i].value.shape() {
                    return Err(Error::shape(
                        "optimizer_step",
                        format!("gradient {:?} for parameter `{}`", g.shape(), store.entries()[i].name),
                    ));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !store.entry(id).trainable {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let v_hat = v[j] / bc2;
                let direction = match c.kind {
                    OptimizerKind::AdamW => m[j] / bc1,
                    OptimizerKind::Nadam => {
                        c.beta1 * m[j] / bc1 + (1.0 - c.beta1) * gj / bc1
                    }
                };
                let decay = c.weight_decay * p[j];
                p[j] -= c.learning_rate * (direction / (v_hat.sqrt() + c.eps) + decay);
            }
        }
        Ok(())
    }
}
