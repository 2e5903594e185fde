//! Minibatch training on the Poisson deviance with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::deviance::deviance_percent;
use crate::data::split::draw_fraction;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{ModelInput, ModelKind, NeuralModel, TrainedModel};
use crate::rng_from_seed;
use crate::tensor::{ForwardCtx, Optimizer, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// Nadam with batch 5000 (one-hot FNN, LocalGLMnet) or 7000 (embedding
    /// FNN, CANN); AdamW at 1e-4 with decay 1e-5 and batch 1024 for the
    /// transformers. 500 epochs, patience 15, 10% validation throughout.
    pub fn for_kind(kind: ModelKind, seed: u64) -> Self {
        let (optimizer, batch_size) = match kind {
            ModelKind::FnnEmb | ModelKind::Cann => (OptimizerConfig::nadam(1e-3), 7000),
            ModelKind::Ftt | ModelKind::Caftt | ModelKind::LocalGlmFtt => {
                (OptimizerConfig::adamw(1e-4, 1e-5), 1024)
            }
            _ => (OptimizerConfig::nadam(1e-3), 5000),
        };
        TrainConfig {
            optimizer,
            batch_size,
            max_epochs: 500,
            patience: 15,
            validation_fraction: 0.1,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch size and patience must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.optimizer.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Epoch `e` (1-based) sits at index `e - 1`. Deviances in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation deviance of the initial weights.
    pub initial_validation: f64,
    /// Row-weighted mean of the minibatch losses.
    pub train_deviance: Vec<f64>,
    pub validation_deviance: Vec<f64>,
    /// Epoch with the lowest validation deviance; 0 only when no epoch ran.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.validation_deviance.len()
    }

    pub fn best_validation(&self) -> f64 {
        if self.best_epoch == 0 {
            self.initial_validation
        } else {
            self.validation_deviance[self.best_epoch - 1]
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_deviance,validation_deviance\n");
        s.push_str(&format!("0,,{}\n", self.initial_validation));
        for (e, (t, v)) in self.train_deviance.iter().zip(&self.validation_deviance).enumerate() {
            s.push_str(&format!("{},{t},{v}\n", e + 1));
        }
        s
    }
}

fn validation_deviance(n: &NeuralModel, store: &crate::tensor::ParamStore, x: &ModelInput) -> Result<f64> {
    deviance_percent(&x.response, &n.predict_with(store, x, None)?)
}

/// Trains on `fit` rows, early-stopping on `validation`, and restores the
/// weights of the best validation epoch.
pub fn train_on(
    model: &mut TrainedModel,
    fit: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let kind = model.kind;
    let n = model
        .neural_mut()
        .ok_or_else(|| Error::WrongKind(format!("{kind} is fitted in closed form, not trained")))?;
    let started = Instant::now();
    let fit_x = n.prepare(fit)?;
    let val_x = n.prepare(validation)?;
    let mut rng = rng_from_seed(cfg.seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(cfg.optimizer, &n.store);

    let initial_validation = validation_deviance(n, &n.store, &val_x)?;
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_store = n.store.clone();
    let mut wait = 0;
    let mut train_dev = Vec::new();
    let mut val_dev = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..fit_x.rows()).collect();

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = fit_x.subset(rows);
            let (g, root) = n.loss(&n.store, &batch, &mut ForwardCtx::training(&mut rng))?;
            let loss = g.value(root).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {}", b + 1)));
            }
            loss_sum += loss * rows.len() as f64;
            let grads = g.backward(root)?.param_grads(&n.store);
            opt.step(&mut n.store, &grads)?;
        }
        let train_epoch = 100.0 * loss_sum / fit_x.rows().max(1) as f64;
        let val = validation_deviance(n, &n.store, &val_x)?;
        log::debug!("{kind} epoch {epoch}: train {train_epoch:.5}%, validation {val:.5}%");
        train_dev.push(train_epoch);
        val_dev.push(val);
        if val < best {
            best = val;
            best_epoch = epoch;
            best_store = n.store.clone();
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    n.store = best_store;
    Ok(TrainHistory {
        initial_validation,
        train_deviance: train_dev,
        validation_deviance: val_dev,
        best_epoch,
        stop_reason,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Draws the validation rows out of `train` with the config seed, then
/// trains.
pub fn train(model: &mut TrainedModel, train: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let rows: Vec<usize> = (0..train.n_rows()).collect();
    let (fit_rows, val_rows) = draw_fraction(&rows, cfg.validation_fraction, cfg.seed)?;
    if val_rows.is_empty() || fit_rows.is_empty() {
        return Err(Error::Config(format!(
            "{} training rows leave an empty fitting or validation part",
            train.n_rows()
        )));
    }
    train_on(model, &train.subset(&fit_rows), &train.subset(&val_rows), cfg)
}
