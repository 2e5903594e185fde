//! Scaled numerical features plus categorical level ids, the input of
//! every neural model.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::encode::{
    fit_standard_scaler, ColumnProvenance, EncodedMatrix, NumericExpr, ScalerParams, Transform,
};
use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralFeatureConfig {
    /// Numerical and boolean inputs, standard scaled after the expression.
    pub numeric: Vec<NumericExpr>,
    pub categorical: Vec<String>,
}

impl NeuralFeatureConfig {
    /// Every numerical/boolean feature as is, every categorical feature.
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for f in &schema.features {
            match f.kind {
                FeatureKind::Categorical { .. } => categorical.push(f.name.clone()),
                _ => numeric.push(NumericExpr::column(&f.name)),
            }
        }
        NeuralFeatureConfig {
            numeric,
            categorical,
        }
    }

    /// [`Self::mtpl`] when the schema carries the MTPL covariates, otherwise
    /// [`Self::from_schema`].
    pub fn for_schema(schema: &FeatureSchema) -> Self {
        let names = |s: &FeatureSchema| s.features.iter().map(|f| f.name.clone()).collect::<Vec<_>>();
        if names(schema) == names(&FeatureSchema::mtpl()) {
            Self::mtpl()
        } else {
            Self::from_schema(schema)
        }
    }

    /// MTPL inputs: caps on vehicle age, driver age and bonus-malus, and log
    /// density; seven scaled numerical inputs plus brand and region.
    pub fn mtpl() -> Self {
        NeuralFeatureConfig {
            numeric: vec![
                NumericExpr::column("Area"),
                NumericExpr::column("VehPower"),
                NumericExpr::capped("VehAge", 20.0),
                NumericExpr::capped("DrivAge", 90.0),
                NumericExpr::capped("BonusMalus", 150.0),
                NumericExpr::column("VehGas"),
                NumericExpr::column("Density").with(Transform::Log),
            ],
            categorical: vec!["VehBrand".into(), "Region".into()],
        }
    }
}

/// Fitted on training rows only; applied unchanged to any other rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralPreprocessor {
    pub config: NeuralFeatureConfig,
    pub scalers: Vec<ScalerParams>,
    pub levels: Vec<Vec<String>>,
    pub schema_hash: String,
}

/// Model-ready inputs for `rows` observations.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralFeatures {
    pub rows: usize,
    /// `rows x k_num`, scaled.
    pub num: Vec<f64>,
    /// `rows x k_cat` level ids.
    pub cat: Vec<usize>,
    pub num_names: Vec<String>,
    pub cat_names: Vec<String>,
    pub cat_sizes: Vec<usize>,
    pub cat_levels: Vec<Vec<String>>,
}

impl NeuralPreprocessor {
    pub fn fit(config: &NeuralFeatureConfig, train: &Dataset) -> Result<Self> {
        let scalers = config
            .numeric
            .iter()
            .map(|e| fit_standard_scaler(&e.label(), &e.evaluate(train)?))
            .collect::<Result<Vec<_>>>()?;
        let levels = config
            .categorical
            .iter()
            .map(|c| Ok(train.categorical(c)?.1.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(NeuralPreprocessor {
            config: config.clone(),
            scalers,
            levels,
            schema_hash: train.schema.hash(),
        })
    }

    pub fn k_num(&self) -> usize {
        self.config.numeric.len()
    }

    pub fn k_cat(&self) -> usize {
        self.config.categorical.len()
    }

    pub fn cat_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Width of the numeric-plus-one-hot input.
    pub fn one_hot_width(&self) -> usize {
        self.k_num() + self.cat_sizes().iter().sum::<usize>()
    }

    pub fn transform(&self, d: &Dataset) -> Result<NeuralFeatures> {
        let found = d.schema.hash();
        if found != self.schema_hash {
            return Err(Error::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found,
            });
        }
        let rows = d.n_rows();
        let (kn, kc) = (self.k_num(), self.k_cat());
        let mut num = vec![0.0; rows * kn];
        for (j, (e, s)) in self.config.numeric.iter().zip(&self.scalers).enumerate() {
            for (i, v) in e.evaluate(d)?.into_iter().enumerate() {
                num[i * kn + j] = s.apply(v);
            }
        }
        let mut cat = vec![0; rows * kc];
        for (j, c) in self.config.categorical.iter().enumerate() {
            let (ids, levels) = d.categorical(c)?;
            if levels != self.levels[j].as_slice() {
                return Err(Error::Config(format!("level dictionary of `{c}` changed")));
            }
            for (i, &id) in ids.iter().enumerate() {
                cat[i * kc + j] = id as usize;
            }
        }
        Ok(NeuralFeatures {
            rows,
            num,
            cat,
            num_names: self.config.numeric.iter().map(NumericExpr::label).collect(),
            cat_names: self.config.categorical.clone(),
            cat_sizes: self.cat_sizes(),
            cat_levels: self.levels.clone(),
        })
    }
}

impl NeuralFeatures {
    pub fn k_num(&self) -> usize {
        self.num_names.len()
    }

    pub fn k_cat(&self) -> usize {
        self.cat_names.len()
    }

    pub fn num_row(&self, i: usize) -> &[f64] {
        let k = self.k_num();
        &self.num[i * k..(i + 1) * k]
    }

    pub fn cat_row(&self, i: usize) -> &[usize] {
        let k = self.k_cat();
        &self.cat[i * k..(i + 1) * k]
    }

    pub fn subset(&self, rows: &[usize]) -> NeuralFeatures {
        let (kn, kc) = (self.k_num(), self.k_cat());
        let mut num = Vec::with_capacity(rows.len() * kn);
        let mut cat = Vec::with_capacity(rows.len() * kc);
        for &r in rows {
            num.extend_from_slice(self.num_row(r));
            cat.extend_from_slice(self.cat_row(r));
        }
        NeuralFeatures {
            rows: rows.len(),
            num,
            cat,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> NeuralFeatures {
        NeuralFeatures {
            rows: 0,
            num: vec![],
            cat: vec![],
            num_names: self.num_names.clone(),
            cat_names: self.cat_names.clone(),
            cat_sizes: self.cat_sizes.clone(),
            cat_levels: self.cat_levels.clone(),
        }
    }

    /// Scaled numerical columns followed by one indicator column per level.
    pub fn one_hot(&self) -> EncodedMatrix {
        let width = self.k_num() + self.cat_sizes.iter().sum::<usize>();
        let mut provenance: Vec<ColumnProvenance> = self
            .num_names
            .iter()
            .map(|n| ColumnProvenance::numeric(n, n.clone()))
            .collect();
        for (name, levels) in self.cat_names.iter().zip(&self.cat_levels) {
            provenance.extend(levels.iter().map(|l| ColumnProvenance::level(name, l)));
        }
        let mut data = vec![0.0; self.rows * width];
        for i in 0..self.rows {
            let row = &mut data[i * width..(i + 1) * width];
            row[..self.k_num()].copy_from_slice(self.num_row(i));
            let mut offset = self.k_num();
            for (j, &id) in self.cat_row(i).iter().enumerate() {
                row[offset + id] = 1.0;
                offset += self.cat_sizes[j];
            }
        }
        EncodedMatrix {
            rows: self.rows,
            data,
            provenance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::SynthSpec;

    #[test]
    fn mtpl_one_hot_width_is_forty() {
        let d = SynthSpec::mtpl(4000).generate(2).unwrap().dataset;
        let p = NeuralPreprocessor::fit(&NeuralFeatureConfig::mtpl(), &d).unwrap();
        assert_eq!(p.cat_sizes(), vec![11, 22]);
        assert_eq!(p.one_hot_width(), 40);
        let f = p.transform(&d).unwrap();
        let m = f.one_hot();
        assert_eq!(m.cols(), 40);
        for i in 0..m.rows {
            let hot: f64 = m.row(i)[7..].iter().sum();
            assert_eq!(hot, 2.0);
        }
    }

    #[test]
    fn scaler_uses_training_rows_only() {
        let d = SynthSpec::mtpl(2000).generate(4).unwrap().dataset;
        let train = d.subset(&(0..1000).collect::<Vec<_>>());
        let p = NeuralPreprocessor::fit(&NeuralFeatureConfig::mtpl(), &train).unwrap();
        let before = p.clone();
        let f = p.transform(&train).unwrap();
        for j in 0..f.k_num() {
            let col: Vec<f64> = (0..f.rows).map(|i| f.num_row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12, "column {j} mean {mean}");
        }
        // transforming held-out rows does not touch the fitted parameters
        let _ = p.transform(&d.subset(&(1000..2000).collect::<Vec<_>>())).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn schema_mismatch_is_detected() {
        let d = SynthSpec::mtpl(500).generate(2).unwrap().dataset;
        let p = NeuralPreprocessor::fit(&NeuralFeatureConfig::mtpl(), &d).unwrap();
        let other = SynthSpec::small(200).generate(1).unwrap().dataset;
        assert!(matches!(p.transform(&other), Err(Error::SchemaMismatch { .. })));
    }
}
