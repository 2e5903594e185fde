use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

/// Drops rows whose value lies outside `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeFilter {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    #[serde(default)]
    pub caps: Vec<Cap>,
    #[serde(default)]
    pub filters: Vec<RangeFilter>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleaningReport {
    pub rows_before: usize,
    pub rows_after: usize,
    pub capped_cells: usize,
    pub frequency_after: f64,
}

impl CleaningRules {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Exposure capped at one year and claim counts at 4.
    pub fn mtpl_default(response: &str, exposure: &str) -> Self {
        CleaningRules {
            caps: vec![
                Cap {
                    column: exposure.into(),
                    min: None,
                    max: Some(1.0),
                },
                Cap {
                    column: response.into(),
                    min: None,
                    max: Some(4.0),
                },
            ],
            filters: vec![],
        }
    }
}

fn values_mut<'a>(d: &'a mut Dataset, column: &str) -> Result<&'a mut Vec<f64>> {
    if column == d.schema.response {
        return Ok(&mut d.response);
    }
    if column == d.schema.exposure {
        return Ok(&mut d.exposure);
    }
    let i = d.schema.index_of(column)?;
    match &mut d.columns[i] {
        Column::Numeric(v) => Ok(v),
        Column::Categorical(_) => Err(Error::Config(format!(
            "cleaning rule on categorical column `{column}`"
        ))),
    }
}

fn values<'a>(d: &'a Dataset, column: &str) -> Result<&'a [f64]> {
    if column == d.schema.response {
        return Ok(&d.response);
    }
    if column == d.schema.exposure {
        return Ok(&d.exposure);
    }
    d.numeric(column)
}

/// Applies filters, then caps. Deterministic and idempotent.
pub fn clean(d: &Dataset, rules: &CleaningRules) -> Result<(Dataset, CleaningReport)> {
    let mut keep = vec![true; d.n_rows()];
    for f in &rules.filters {
        let v = values(d, &f.column)?;
        for (k, x) in keep.iter_mut().zip(v) {
            if f.min.is_some_and(|m| *x < m) || f.max.is_some_and(|m| *x > m) {
                *k = false;
            }
        }
    }
    for c in &rules.caps {
        values(d, &c.column)?;
        if let (Some(lo), Some(hi)) = (c.min, c.max) {
            if lo > hi {
                return Err(Error::Config(format!("cap on `{}` has min > max", c.column)));
            }
        }
    }
    let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| keep[i]).collect();
    let mut out = d.subset(&rows);
    let mut capped = 0;
    for c in &rules.caps {
        for x in values_mut(&mut out, &c.column)?.iter_mut() {
            let before = *x;
            if let Some(m) = c.min {
                *x = x.max(m);
            }
            if let Some(m) = c.max {
                *x = x.min(m);
            }
            if *x != before {
                capped += 1;
            }
        }
    }
    if out.exposure.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config("cleaning produced non-positive exposure".into()));
    }
    let report = CleaningReport {
        rows_before: d.n_rows(),
        rows_after: out.n_rows(),
        capped_cells: capped,
        frequency_after: if out.n_rows() > 0 { out.frequency() } else { 0.0 },
    };
    log::info!(
        "cleaning: {} -> {} rows, {} capped cells, portfolio frequency {:.5}",
        report.rows_before,
        report.rows_after,
        report.capped_cells,
        report.frequency_after
    );
    Ok((out, report))
}
