//! Per-row attentions `beta_j(x)` and contributions `beta_j(x) x_j` of the
//! LocalGLM families.

use std::io::Write;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{FttHead, ModelInput, Network, NeuralModel, TrainedModel};
use crate::tensor::{ForwardCtx, Graph};

/// Row-major `rows x features` attentions and contributions. For every row,
/// `intercept + sum_j contribution_j = ln(yhat / v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attributions {
    pub row_ids: Vec<String>,
    pub features: Vec<String>,
    pub intercept: Vec<f64>,
    pub beta: Vec<f64>,
    pub contribution: Vec<f64>,
}

const CHUNK: usize = 4096;

impl Attributions {
    pub fn rows(&self) -> usize {
        self.intercept.len()
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn beta_row(&self, i: usize) -> &[f64] {
        &self.beta[i * self.k()..(i + 1) * self.k()]
    }

    pub fn contribution_row(&self, i: usize) -> &[f64] {
        &self.contribution[i * self.k()..(i + 1) * self.k()]
    }

    /// `intercept + sum_j contribution_j` per row.
    pub fn log_rate(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|i| self.intercept[i] + self.contribution_row(i).iter().sum::<f64>())
            .collect()
    }

    /// Largest `|reconstruction - ln(yhat / v)|` over the rows.
    pub fn max_reconstruction_error(&self, pred: &[f64], exposure: &[f64]) -> f64 {
        self.log_rate()
            .iter()
            .zip(pred.iter().zip(exposure))
            .map(|(r, (p, v))| (r - (p / v).ln()).abs())
            .fold(0.0, f64::max)
    }

    /// Long format `row_id,feature,beta,contribution`, with one
    /// `(intercept)` line per row whose beta and contribution both hold the
    /// intercept.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row_id", "feature", "beta", "contribution"])?;
        for i in 0..self.rows() {
            let id = &self.row_ids[i];
            let b0 = self.intercept[i].to_string();
            out.write_record([id.as_str(), "(intercept)", &b0, &b0])?;
            for (j, f) in self.features.iter().enumerate() {
                out.write_record([
                    id.as_str(),
                    f.as_str(),
                    &self.beta_row(i)[j].to_string(),
                    &self.contribution_row(i)[j].to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn chunk_attributions(n: &NeuralModel, x: &ModelInput) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let store = &n.store;
    let (beta, design, scale, intercept) = match &n.network {
        Network::LocalGlmNet(net) => {
            let (b, d) = net.attentions(&mut g, store, x)?;
            (b, d, store.get(net.alpha).data()[0], store.get(net.beta0).data()[0])
        }
        Network::Ftt {
            config,
            trunk,
            head: head @ FttHead::LocalGlm { beta0, .. },
        } => {
            let r = trunk.forward(&mut g, store, &x.features, config, &mut ForwardCtx::inference(), None)?;
            let (b, d) = head.attentions(&mut g, store, r, x)?;
            (b, d, 1.0, store.get(*beta0).data()[0])
        }
        _ => return Err(Error::WrongKind("model kind has no GLM skip".into())),
    };
    let beta: Vec<f64> = g.value(beta).data().iter().map(|b| b * scale).collect();
    let contribution = beta.iter().zip(g.value(design).data()).map(|(b, v)| b * v).collect();
    Ok((beta, contribution, vec![intercept; x.rows()]))
}

/// Attributions for every row of `d`. The rebalancing factor enters the
/// intercept as `ln(rebalance)`.
pub fn local_glm_attributions(model: &TrainedModel, d: &Dataset) -> Result<Attributions> {
    if !model.kind.is_local_glm() {
        return Err(Error::WrongKind(format!("{}: model kind has no GLM skip", model.kind)));
    }
    model.check_schema(d)?;
    let n = model
        .neural()
        .ok_or_else(|| Error::WrongKind("model kind has no GLM skip".into()))?;
    let x = n.prepare(d)?;
    let features = match &n.network {
        Network::LocalGlmNet(_) => x.dense.as_ref().map(|m| m.labels()).unwrap_or_default(),
        _ => x
            .features
            .num_names
            .iter()
            .chain(&x.features.cat_names)
            .cloned()
            .collect(),
    };
    let shift = model.rebalance.ln();
    let mut out = Attributions {
        row_ids: match &d.ids {
            Some(ids) => ids.clone(),
            None => (0..d.n_rows()).map(|i| i.to_string()).collect(),
        },
        features,
        intercept: Vec::with_capacity(d.n_rows()),
        beta: Vec::new(),
        contribution: Vec::new(),
    };
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let (b, c, i) = chunk_attributions(n, &x.range(start, end))?;
        out.beta.extend(b);
        out.contribution.extend(c);
        out.intercept.extend(i.into_iter().map(|v| v + shift));
        start = end;
    }
    Ok(out)
}

/// Member-wise mean of attentions, contributions and intercepts.
pub fn ensemble_attributions(members: &[&TrainedModel], d: &Dataset) -> Result<Attributions> {
    let first = members
        .first()
        .ok_or_else(|| Error::Empty("ensemble without members".into()))?;
    let mut acc = local_glm_attributions(first, d)?;
    for m in &members[1..] {
        let a = local_glm_attributions(m, d)?;
        if a.features != acc.features {
            return Err(Error::Contract("ensemble members attribute different features".into()));
        }
        for (x, y) in acc.beta.iter_mut().zip(&a.beta) {
            *x += y;
        }
        for (x, y) in acc.contribution.iter_mut().zip(&a.contribution) {
            *x += y;
        }
        for (x, y) in acc.intercept.iter_mut().zip(&a.intercept) {
            *x += y;
        }
    }
    let k = members.len() as f64;
    for v in acc.beta.iter_mut().chain(acc.contribution.iter_mut()).chain(acc.intercept.iter_mut()) {
        *v /= k;
    }
    Ok(acc)
}
