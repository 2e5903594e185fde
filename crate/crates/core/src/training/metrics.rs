//! Rebalancing, ensembling and the per-model report rows.

use serde::{Deserialize, Serialize};

use super::deviance::deviance_percent;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::TrainedModel;

/// Sets `model.rebalance = sum(y) / sum(yhat)` over `train`, using the raw
/// predictions, so rebalancing is idempotent. Returns the factor.
pub fn rebalance(model: &mut TrainedModel, train: &Dataset) -> Result<f64> {
    let total: f64 = model.predict_raw(train)?.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite(format!("prediction sum {total} in rebalance")));
    }
    let factor = train.total_claims() / total;
    model.rebalance = factor;
    Ok(factor)
}

/// Mean of the members' (rebalanced) predictions, on the count scale.
pub fn ensemble_predict(members: &[&TrainedModel], d: &Dataset) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Empty("ensemble without members".into()))?;
    let mut out = vec![0.0; d.n_rows()];
    for m in members {
        if m.schema.hash() != first.schema.hash() {
            return Err(Error::SchemaMismatch {
                expected: first.schema.hash(),
                found: m.schema.hash(),
            });
        }
        for (o, p) in out.iter_mut().zip(m.predict(d)?) {
            *o += p;
        }
    }
    let k = members.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageDefinition {
    /// `100 * sum(yhat) / sum(v)`.
    #[default]
    ExposureWeighted,
    /// `100 * mean(yhat_i / v_i)`.
    RowMean,
}

pub fn average_frequency(pred: &[f64], exposure: &[f64], def: AverageDefinition) -> f64 {
    match def {
        AverageDefinition::ExposureWeighted => 100.0 * pred.iter().sum::<f64>() / exposure.iter().sum::<f64>(),
        AverageDefinition::RowMean => {
            100.0 * pred.iter().zip(exposure).map(|(p, v)| p / v).sum::<f64>() / pred.len() as f64
        }
    }
}

/// One evaluated fit (or ensemble).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    /// Seed or ensemble label.
    pub run: String,
    pub train_deviance: f64,
    pub test_deviance: f64,
    /// Average predicted frequency on the test rows, in percent.
    pub avg_frequency: f64,
    pub parameters: usize,
    pub epochs: Option<usize>,
    pub seconds: f64,
}

/// Deviances and average frequency from ready-made predictions.
pub fn metrics_from_predictions(
    model: &str,
    run: &str,
    train: (&Dataset, &[f64]),
    test: (&Dataset, &[f64]),
    def: AverageDefinition,
) -> Result<MetricsRow> {
    Ok(MetricsRow {
        model: model.to_string(),
        run: run.to_string(),
        train_deviance: deviance_percent(&train.0.response, train.1)?,
        test_deviance: deviance_percent(&test.0.response, test.1)?,
        avg_frequency: average_frequency(test.1, &test.0.exposure, def),
        parameters: 0,
        epochs: None,
        seconds: 0.0,
    })
}

pub fn evaluate(model: &TrainedModel, run: &str, train: &Dataset, test: &Dataset, def: AverageDefinition) -> Result<MetricsRow> {
    let p_train = model.predict(train)?;
    let p_test = model.predict(test)?;
    let mut row = metrics_from_predictions(model.kind.display_name(), run, (train, &p_train), (test, &p_test), def)?;
    row.parameters = model.count_parameters();
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub runs: usize,
    pub train_deviance: MeanStd,
    pub test_deviance: MeanStd,
    pub avg_frequency: MeanStd,
    pub parameters: usize,
    pub epochs: Option<MeanStd>,
    pub seconds: MeanStd,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    /// Mean and standard deviation per model, in first-seen model order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut models: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        models
            .into_iter()
            .map(|m| {
                let rows: Vec<&MetricsRow> = self.rows.iter().filter(|r| r.model == m).collect();
                let col = |f: fn(&MetricsRow) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                let epochs: Vec<f64> = rows.iter().filter_map(|r| r.epochs.map(|e| e as f64)).collect();
                AggregateRow {
                    model: m.to_string(),
                    runs: rows.len(),
                    train_deviance: col(|r| r.train_deviance),
                    test_deviance: col(|r| r.test_deviance),
                    avg_frequency: col(|r| r.avg_frequency),
                    parameters: rows[0].parameters,
                    epochs: (epochs.len() == rows.len()).then(|| MeanStd::of(&epochs)),
                    seconds: col(|r| r.seconds),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthSpec;
    use crate::models::{build_model, ModelKind, ModelSpec};

    #[test]
    fn single_run_has_zero_std() {
        assert_eq!(MeanStd::of(&[3.0]).std, 0.0);
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn rebalance_restores_train_average() {
        let d = SynthSpec::small(2000).generate(3).unwrap().dataset;
        let mut m = build_model(ModelKind::FnnEmb, &ModelSpec::default(), &d, None, 1).unwrap();
        // perturb so the model is off balance
        m.rebalance = 1.3;
        let f = rebalance(&mut m, &d).unwrap();
        let total: f64 = m.predict(&d).unwrap().iter().sum();
        assert!((total / d.total_claims() - 1.0).abs() < 1e-12);
        assert_eq!(rebalance(&mut m, &d).unwrap(), f);
    }

    #[test]
    fn ensemble_of_copies_is_the_member() {
        let d = SynthSpec::small(500).generate(4).unwrap().dataset;
        let m = build_model(ModelKind::Glm1, &ModelSpec::default(), &d, None, 1).unwrap();
        let single = m.predict(&d).unwrap();
        let e = ensemble_predict(&[&m, &m, &m, &m, &m], &d).unwrap();
        for (a, b) in single.iter().zip(&e) {
            assert!((a - b).abs() <= 1e-15 * a);
        }
        assert!(ensemble_predict(&[], &d).is_err());
    }

    #[test]
    fn evaluate_on_same_rows_gives_equal_columns() {
        let d = SynthSpec::small(500).generate(4).unwrap().dataset;
        let m = build_model(ModelKind::Mean, &ModelSpec::default(), &d, None, 1).unwrap();
        let r = evaluate(&m, "0", &d, &d, AverageDefinition::ExposureWeighted).unwrap();
        assert_eq!(r.train_deviance, r.test_deviance);
        assert!((r.avg_frequency - 100.0 * d.frequency()).abs() < 1e-10);
    }
}
