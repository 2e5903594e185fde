use crate::data::{EncodedMatrix, NeuralFeatures};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Everything a network needs for a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub features: NeuralFeatures,
    /// Scaled numerical columns followed by one-hot columns, for the
    /// one-hot families only.
    pub dense: Option<EncodedMatrix>,
    /// `ln v_i`, plus the bound GLM's linear predictor for CANN/CAFTT.
    pub log_offset: Vec<f64>,
    pub response: Vec<f64>,
    pub exposure: Vec<f64>,
}

impl ModelInput {
    pub fn rows(&self) -> usize {
        self.features.rows
    }

    pub fn subset(&self, rows: &[usize]) -> ModelInput {
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        ModelInput {
            features: self.features.subset(rows),
            dense: self.dense.as_ref().map(|m| m.subset(rows)),
            log_offset: pick(&self.log_offset),
            response: pick(&self.response),
            exposure: pick(&self.exposure),
        }
    }

    /// Rows `start..end`.
    pub fn range(&self, start: usize, end: usize) -> ModelInput {
        self.subset(&(start..end).collect::<Vec<_>>())
    }

    pub(crate) fn num_const(&self, g: &mut Graph) -> Result<Var> {
        let f = &self.features;
        g.constant(Tensor::matrix(f.rows, f.k_num(), f.num.clone())?)
    }

    pub(crate) fn dense_const(&self, g: &mut Graph) -> Result<Var> {
        let m = self
            .dense
            .as_ref()
            .ok_or_else(|| Error::Contract("model input lacks the one-hot design".into()))?;
        g.constant(Tensor::matrix(m.rows, m.cols(), m.data.clone())?)
    }

    /// Level ids of categorical input `j`.
    pub(crate) fn cat_ids(&self, j: usize) -> Vec<usize> {
        (0..self.rows()).map(|i| self.features.cat_row(i)[j]).collect()
    }

    pub(crate) fn offset_const(&self, g: &mut Graph) -> Result<Var> {
        g.constant(Tensor::matrix(self.rows(), 1, self.log_offset.clone())?)
    }
}
