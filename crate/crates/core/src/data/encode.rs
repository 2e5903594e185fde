use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Which feature (and level, for categorical expansions) a design column
/// came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnProvenance {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    pub label: String,
}

impl ColumnProvenance {
    pub fn numeric(feature: &str, label: impl Into<String>) -> Self {
        ColumnProvenance {
            feature: feature.to_string(),
            level: None,
            label: label.into(),
        }
    }

    pub fn level(feature: &str, level: &str) -> Self {
        ColumnProvenance {
            feature: feature.to_string(),
            level: Some(level.to_string()),
            label: format!("{feature}={level}"),
        }
    }
}

/// Row-major numeric design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub data: Vec<f64>,
    pub provenance: Vec<ColumnProvenance>,
}

impl EncodedMatrix {
    pub fn empty(rows: usize) -> Self {
        EncodedMatrix {
            rows,
            data: vec![],
            provenance: vec![],
        }
    }

    pub fn cols(&self) -> usize {
        self.provenance.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let c = self.cols();
        (0..self.rows).map(|i| self.data[i * c + j]).collect()
    }

    /// Builds from column vectors of equal length.
    pub fn from_columns(rows: usize, columns: Vec<(ColumnProvenance, Vec<f64>)>) -> Result<Self> {
        if columns.iter().any(|(_, c)| c.len() != rows) {
            return Err(Error::shape("EncodedMatrix", "column length differs from row count"));
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, (_, c)) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                data[i * cols + j] = *v;
            }
        }
        Ok(EncodedMatrix {
            rows,
            data,
            provenance: columns.into_iter().map(|(p, _)| p).collect(),
        })
    }

    pub fn subset(&self, rows: &[usize]) -> EncodedMatrix {
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        EncodedMatrix {
            rows: rows.len(),
            data,
            provenance: self.provenance.clone(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.provenance.iter().map(|p| p.label.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: f64,
    pub std: f64,
}

impl ScalerParams {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Mean and population standard deviation of one training column.
pub fn fit_standard_scaler(name: &str, values: &[f64]) -> Result<ScalerParams> {
    if values.is_empty() {
        return Err(Error::Empty(format!("scaler column `{name}`")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::ZeroVariance(name.to_string()));
    }
    Ok(ScalerParams { mean, std })
}

pub fn apply_scaler(p: &ScalerParams, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| p.apply(v)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalEncoding {
    /// `S - 1` indicator columns; level 0 (lexicographically first) is the reference.
    Dummy,
    /// `S` indicator columns.
    OneHot,
}

fn indicator_columns(
    feature: &str,
    ids: &[u32],
    levels: &[String],
    skip_first: bool,
) -> Result<Vec<(ColumnProvenance, Vec<f64>)>> {
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= levels.len()) {
        return Err(Error::UnseenLevel {
            feature: feature.to_string(),
            level: format!("#{bad}"),
        });
    }
    let start = usize::from(skip_first);
    Ok((start..levels.len())
        .map(|l| {
            let col = ids.iter().map(|&i| f64::from(i as usize == l)).collect();
            (ColumnProvenance::level(feature, &levels[l]), col)
        })
        .collect())
}

pub fn one_hot_encode(
    feature: &str,
    ids: &[u32],
    levels: &[String],
) -> Result<Vec<(ColumnProvenance, Vec<f64>)>> {
    indicator_columns(feature, ids, levels, false)
}

pub fn dummy_encode(
    feature: &str,
    ids: &[u32],
    levels: &[String],
) -> Result<Vec<(ColumnProvenance, Vec<f64>)>> {
    indicator_columns(feature, ids, levels, true)
}

pub fn encode_categorical(
    feature: &str,
    ids: &[u32],
    levels: &[String],
    encoding: CategoricalEncoding,
) -> Result<Vec<(ColumnProvenance, Vec<f64>)>> {
    match encoding {
        CategoricalEncoding::Dummy => dummy_encode(feature, ids, levels),
        CategoricalEncoding::OneHot => one_hot_encode(feature, ids, levels),
    }
}

/// Bin ids for `edges[0] < ... < edges[m]`, defining `m` right-open bins.
/// Values below the first edge fall in bin 0, values at or above the last
/// edge in bin `m - 1`.
pub fn bin_numeric(values: &[f64], edges: &[f64]) -> Result<Vec<u32>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(format!("bin edges {edges:?} must be strictly increasing")));
    }
    let bins = edges.len() - 1;
    Ok(values
        .iter()
        .map(|&x| {
            // number of interior edges at or below x
            let b = edges[1..bins].partition_point(|&e| e <= x);
            b as u32
        })
        .collect())
}

pub fn bin_labels(edges: &[f64]) -> Vec<String> {
    edges
        .windows(2)
        .map(|w| format!("[{},{})", w[0], w[1]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    Power { exponent: i32 },
}

/// A numeric column after optional clamping and a pointwise transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericExpr {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default = "identity")]
    pub transform: Transform,
}

fn identity() -> Transform {
    Transform::Identity
}

impl NumericExpr {
    pub fn column(name: &str) -> Self {
        NumericExpr {
            column: name.to_string(),
            min: None,
            max: None,
            transform: Transform::Identity,
        }
    }

    pub fn capped(name: &str, max: f64) -> Self {
        NumericExpr {
            max: Some(max),
            ..Self::column(name)
        }
    }

    pub fn with(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn label(&self) -> String {
        let base = match (self.min, self.max) {
            (None, None) => self.column.clone(),
            (lo, hi) => format!(
                "clamp({}, {}, {})",
                self.column,
                lo.map_or("-".into(), |v| v.to_string()),
                hi.map_or("-".into(), |v| v.to_string())
            ),
        };
        match self.transform {
            Transform::Identity => base,
            Transform::Log => format!("log({base})"),
            Transform::Power { exponent } => format!("{base}^{exponent}"),
        }
    }

    pub fn evaluate(&self, d: &Dataset) -> Result<Vec<f64>> {
        let raw = d.numeric(&self.column)?;
        raw.iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut v = x;
                if let Some(lo) = self.min {
                    v = v.max(lo);
                }
                if let Some(hi) = self.max {
                    v = v.min(hi);
                }
                let out = match self.transform {
                    Transform::Identity => v,
                    Transform::Log => v.ln(),
                    Transform::Power { exponent } => v.powi(exponent),
                };
                if out.is_finite() {
                    Ok(out)
                } else {
                    Err(Error::Parse {
                        row: i,
                        column: self.column.clone(),
                        message: format!("{} is not finite for value {x}", self.label()),
                    })
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scaler_examples() {
        let p = fit_standard_scaler("x", &[0.0, 2.0]).unwrap();
        assert_eq!((p.mean, p.std), (1.0, 1.0));
        assert_eq!(apply_scaler(&p, &[0.0, 2.0]), vec![-1.0, 1.0]);
        let p = fit_standard_scaler("z", &[-1.0, 1.0]).unwrap();
        assert_eq!((p.mean, p.std), (0.0, 1.0));
        assert_eq!(apply_scaler(&p, &[-1.0, 1.0]), vec![-1.0, 1.0]);
        assert!(matches!(
            fit_standard_scaler("c", &[3.0, 3.0, 3.0]),
            Err(Error::ZeroVariance(c)) if c == "c"
        ));
    }

    #[test]
    fn encoding_widths() {
        let levels: Vec<String> = (1..=22).map(|i| format!("R{i}")).collect();
        let ids: Vec<u32> = (0..50).map(|i| i % 22).collect();
        assert_eq!(one_hot_encode("Region", &ids, &levels).unwrap().len(), 22);
        let two = vec!["a".to_string(), "b".to_string()];
        let d = dummy_encode("g", &[0, 1, 1], &two).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].1, vec![0.0, 1.0, 1.0]);
        assert!(one_hot_encode("g", &[2], &two).is_err());
    }

    #[test]
    fn binning_conventions() {
        let edges = [0.0, 1.0, 2.0];
        assert_eq!(bin_numeric(&[0.5], &edges).unwrap(), vec![0]);
        assert_eq!(bin_numeric(&[1.0], &edges).unwrap(), vec![1]);
        assert_eq!(bin_numeric(&[7.0, -3.0], &edges).unwrap(), vec![1, 0]);
        assert!(bin_numeric(&[1.0], &[0.0, 2.0, 1.0]).is_err());
        assert!(bin_numeric(&[1.0], &[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn one_hot_rows_sum_to_one(ids in proptest::collection::vec(0u32..5, 1..40)) {
            let levels: Vec<String> = (0..5).map(|i| format!("L{i}")).collect();
            let cols = one_hot_encode("f", &ids, &levels).unwrap();
            for (r, &id) in ids.iter().enumerate() {
                let row: Vec<f64> = cols.iter().map(|(_, c)| c[r]).collect();
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                // provenance of the hot column inverts the encoding
                let hot = row.iter().position(|&v| v == 1.0).unwrap();
                prop_assert_eq!(cols[hot].0.level.as_deref(), Some(levels[id as usize].as_str()));
            }
        }

        #[test]
        fn scaled_training_column_is_standard(v in proptest::collection::vec(-1e3f64..1e3, 3..60)) {
            prop_assume!(fit_standard_scaler("x", &v).is_ok());
            let p = fit_standard_scaler("x", &v).unwrap();
            let t = apply_scaler(&p, &v);
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let var = t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }
}
