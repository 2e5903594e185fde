//! Model families, their construction from a training set, and prediction.

pub mod fnn;
pub mod ftt;
mod input;
pub mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fnn::{FnnInput, FnnNet, FnnSpec, LocalGlmNet, Mlp};
pub use ftt::{FeatureTokenizer, FttConfig, FttHead, FttTrunk, TransformerBlock};
pub use input::ModelInput;
pub use io::{load_model, save_model};

use crate::data::{Dataset, FeatureSchema, GlmDesign, NeuralFeatureConfig, NeuralPreprocessor};
use crate::error::{Error, Result};
use crate::glm::{fit_poisson_glm, glm_predict, FittedGlm, GlmOptions, GlmParams};
use crate::tensor::{ForwardCtx, Graph, ParamStore, Var};
use crate::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mean,
    Glm1,
    Glm2,
    Glm3,
    FnnOhe,
    FnnEmb,
    Cann,
    #[serde(rename = "localglmnet")]
    LocalGlmNet,
    Ftt,
    Caftt,
    #[serde(rename = "localglmftt")]
    LocalGlmFtt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind::Mean,
        ModelKind::Glm1,
        ModelKind::Glm2,
        ModelKind::Glm3,
        ModelKind::FnnOhe,
        ModelKind::FnnEmb,
        ModelKind::Cann,
        ModelKind::LocalGlmNet,
        ModelKind::Ftt,
        ModelKind::Caftt,
        ModelKind::LocalGlmFtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Glm1 => "glm1",
            ModelKind::Glm2 => "glm2",
            ModelKind::Glm3 => "glm3",
            ModelKind::FnnOhe => "fnn_ohe",
            ModelKind::FnnEmb => "fnn_emb",
            ModelKind::Cann => "cann",
            ModelKind::LocalGlmNet => "localglmnet",
            ModelKind::Ftt => "ftt",
            ModelKind::Caftt => "caftt",
            ModelKind::LocalGlmFtt => "localglmftt",
        }
    }

    /// Label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Mean => "mean model",
            ModelKind::Glm1 => "GLM1",
            ModelKind::Glm2 => "GLM2",
            ModelKind::Glm3 => "GLM3",
            ModelKind::FnnOhe => "FNN_OHE",
            ModelKind::FnnEmb => "FNN_EMB",
            ModelKind::Cann => "CANN",
            ModelKind::LocalGlmNet => "LocalGLMnet",
            ModelKind::Ftt => "FTT_def",
            ModelKind::Caftt => "CAFTT_def",
            ModelKind::LocalGlmFtt => "LocalGLMftt_def",
        }
    }

    pub fn is_glm(self) -> bool {
        matches!(self, ModelKind::Mean | ModelKind::Glm1 | ModelKind::Glm2 | ModelKind::Glm3)
    }

    pub fn is_neural(self) -> bool {
        !self.is_glm()
    }

    /// Multiplies a frozen GLM prediction.
    pub fn is_residual(self) -> bool {
        matches!(self, ModelKind::Cann | ModelKind::Caftt)
    }

    pub fn is_local_glm(self) -> bool {
        matches!(self, ModelKind::LocalGlmNet | ModelKind::LocalGlmFtt)
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, ModelKind::Ftt | ModelKind::Caftt | ModelKind::LocalGlmFtt)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Architecture and preprocessing choices shared by every family; each
/// kind reads the parts it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// Neural inputs; schema dependent default.
    pub features: Option<NeuralFeatureConfig>,
    /// Design for the GLM kinds; schema dependent default.
    pub glm_design: Option<GlmDesign>,
    /// GLM that CANN and CAFTT multiply; GLM3 on MTPL data, main effects
    /// otherwise.
    pub residual_design: Option<GlmDesign>,
    pub fnn: FnnSpec,
    pub ftt: FttConfig,
}

fn is_mtpl(schema: &FeatureSchema) -> bool {
    let names = |s: &FeatureSchema| s.features.iter().map(|f| f.name.clone()).collect::<Vec<_>>();
    names(schema) == names(&FeatureSchema::mtpl())
}

impl ModelSpec {
    pub fn features_for(&self, schema: &FeatureSchema) -> NeuralFeatureConfig {
        self.features
            .clone()
            .unwrap_or_else(|| NeuralFeatureConfig::for_schema(schema))
    }

    /// Design of a GLM kind.
    pub fn design_for(&self, kind: ModelKind, schema: &FeatureSchema) -> Result<GlmDesign> {
        if kind == ModelKind::Mean {
            return Ok(GlmDesign::intercept_only());
        }
        if let Some(d) = &self.glm_design {
            return Ok(d.clone());
        }
        if !is_mtpl(schema) {
            return Ok(GlmDesign::main_effects(schema));
        }
        match kind {
            ModelKind::Glm1 => Ok(GlmDesign::mtpl_glm1()),
            ModelKind::Glm2 => Ok(GlmDesign::mtpl_glm2()),
            ModelKind::Glm3 => Ok(GlmDesign::mtpl_glm3()),
            _ => Err(Error::WrongKind(format!("{kind} is not a GLM"))),
        }
    }

    pub fn residual_design_for(&self, schema: &FeatureSchema) -> GlmDesign {
        match &self.residual_design {
            Some(d) => d.clone(),
            None if is_mtpl(schema) => GlmDesign::mtpl_glm3(),
            None => GlmDesign::main_effects(schema),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Network {
    Fnn(FnnNet),
    LocalGlmNet(LocalGlmNet),
    Ftt {
        config: FttConfig,
        trunk: FttTrunk,
        head: FttHead,
    },
}

/// Network weights plus everything needed to turn a [`Dataset`] into its
/// inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralModel {
    pub network: Network,
    pub store: ParamStore,
    pub preprocessor: NeuralPreprocessor,
    /// Frozen GLM whose prediction is the CANN/CAFTT offset.
    pub residual_glm: Option<FittedGlm>,
    /// One-hot GLM the LocalGLM families start from.
    pub start_glm: Option<GlmParams>,
}

/// Rows per forward pass during prediction.
const PREDICT_CHUNK: usize = 1024;

impl NeuralModel {
    pub fn prepare(&self, d: &Dataset) -> Result<ModelInput> {
        let features = self.preprocessor.transform(d)?;
        let dense = match &self.network {
            Network::Fnn(FnnNet {
                input: FnnInput::OneHot,
                ..
            })
            | Network::LocalGlmNet(_) => Some(features.one_hot()),
            _ => None,
        };
        let mut log_offset: Vec<f64> = d.exposure.iter().map(|v| v.ln()).collect();
        if let Some(glm) = &self.residual_glm {
            for (o, eta) in log_offset.iter_mut().zip(glm.linear_predictor(d)?) {
                *o += eta;
            }
        }
        Ok(ModelInput {
            features,
            dense,
            log_offset,
            response: d.response.clone(),
            exposure: d.exposure.clone(),
        })
    }

    /// `[B, 1]` log-frequency before the offset, with an optional
    /// permutation of the feature tokens (transformer families only).
    pub fn score(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: &ModelInput,
        ctx: &mut ForwardCtx<'_>,
        token_order: Option<&[usize]>,
    ) -> Result<Var> {
        match &self.network {
            Network::Fnn(n) => n.log_rate(g, store, x),
            Network::LocalGlmNet(n) => n.log_rate(g, store, x),
            Network::Ftt { config, trunk, head } => {
                let r = trunk.forward(g, store, &x.features, config, ctx, token_order)?;
                head.forward(g, store, r, x)
            }
        }
    }

    /// `[B, 1]` log expected counts `score + offset`.
    pub fn log_mu(&self, g: &mut Graph, store: &ParamStore, x: &ModelInput, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let s = self.score(g, store, x, ctx, None)?;
        let o = x.offset_const(g)?;
        g.add(s, o)
    }

    /// Graph whose root is the mean unit deviance on `x`.
    pub fn loss(&self, store: &ParamStore, x: &ModelInput, ctx: &mut ForwardCtx<'_>) -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let lm = self.log_mu(&mut g, store, x, ctx)?;
        let root = g.poisson_deviance(lm, x.response.clone())?;
        Ok((g, root))
    }

    /// Expected counts in inference mode under parameters `store`.
    pub fn predict_with(&self, store: &ParamStore, x: &ModelInput, token_order: Option<&[usize]>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.rows());
        let mut start = 0;
        while start < x.rows() {
            let end = (start + PREDICT_CHUNK).min(x.rows());
            let chunk = x.range(start, end);
            let mut g = Graph::new();
            let s = self.score(&mut g, store, &chunk, &mut ForwardCtx::inference(), token_order)?;
            out.extend(
                g.value(s)
                    .data()
                    .iter()
                    .zip(&chunk.log_offset)
                    .map(|(a, o)| (a + o).exp()),
            );
            start = end;
        }
        Ok(out)
    }

    pub fn predict_input(&self, x: &ModelInput) -> Result<Vec<f64>> {
        self.predict_with(&self.store, x, None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelBody {
    Glm(FittedGlm),
    Neural(Box<NeuralModel>),
}

/// A fitted model of any family, with its rebalancing factor.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub schema: FeatureSchema,
    pub spec: ModelSpec,
    pub body: ModelBody,
    /// Multiplies every prediction; 1 until rebalanced.
    pub rebalance: f64,
}

impl TrainedModel {
    /// Trainable scalars, excluding frozen GLM betas.
    pub fn count_parameters(&self) -> usize {
        match &self.body {
            ModelBody::Glm(g) => g.n_params(),
            ModelBody::Neural(n) => n.store.trainable_count(),
        }
    }

    pub fn neural(&self) -> Option<&NeuralModel> {
        match &self.body {
            ModelBody::Neural(n) => Some(n),
            ModelBody::Glm(_) => None,
        }
    }

    pub fn neural_mut(&mut self) -> Option<&mut NeuralModel> {
        match &mut self.body {
            ModelBody::Neural(n) => Some(n),
            ModelBody::Glm(_) => None,
        }
    }

    /// Predictions before rebalancing.
    pub fn predict_raw(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(d)?;
        match &self.body {
            ModelBody::Glm(g) => g.predict(d),
            ModelBody::Neural(n) => n.predict_input(&n.prepare(d)?),
        }
    }

    /// Expected claim counts `rebalance * yhat_i`.
    pub fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        let r = self.rebalance;
        Ok(self.predict_raw(d)?.into_iter().map(|y| y * r).collect())
    }

    pub fn check_schema(&self, d: &Dataset) -> Result<()> {
        let (expected, found) = (self.schema.hash(), d.schema.hash());
        if expected != found {
            return Err(Error::SchemaMismatch { expected, found });
        }
        Ok(())
    }
}

/// GLM over the scaled numerical plus one-hot inputs the LocalGLM families
/// use; rank deficiency is resolved with the ridge jitter.
pub fn fit_start_glm(pre: &NeuralPreprocessor, train: &Dataset) -> Result<GlmParams> {
    let x = pre.transform(train)?.one_hot();
    let (mut p, _) = fit_poisson_glm(&x, &train.response, &train.exposure, &GlmOptions::one_hot())?;
    p.encoding = crate::data::CategoricalEncoding::OneHot;
    Ok(p)
}

/// Initialised (untrained) model of `kind` for the rows of `train`.
///
/// GLM kinds are fitted outright. CANN/CAFTT reuse `residual` when given and
/// otherwise fit the spec's residual design on `train`. `seed` drives every
/// random initialisation.
pub fn build_model(
    kind: ModelKind,
    spec: &ModelSpec,
    train: &Dataset,
    residual: Option<&FittedGlm>,
    seed: u64,
) -> Result<TrainedModel> {
    let schema = train.schema.clone();
    let body = if kind.is_glm() {
        let design = spec.design_for(kind, &schema)?;
        ModelBody::Glm(FittedGlm::fit(&design, train, &GlmOptions::default())?.0)
    } else {
        let mut rng = rng_from_seed(seed);
        let preprocessor = NeuralPreprocessor::fit(&spec.features_for(&schema), train)?;
        let residual_glm = if kind.is_residual() {
            Some(match residual {
                Some(g) => g.clone(),
                None => FittedGlm::fit(&spec.residual_design_for(&schema), train, &GlmOptions::default())?.0,
            })
        } else {
            None
        };
        let start_glm = if kind.is_local_glm() {
            Some(fit_start_glm(&preprocessor, train)?)
        } else {
            None
        };
        let log_freq = train.frequency().ln();
        let mut store = ParamStore::new();
        let (k_num, names, sizes) = (
            preprocessor.k_num(),
            preprocessor.config.categorical.clone(),
            preprocessor.cat_sizes(),
        );
        let network = match kind {
            ModelKind::FnnOhe => Network::Fnn(FnnNet::one_hot(
                &mut store,
                &spec.fnn,
                preprocessor.one_hot_width(),
                log_freq,
                &mut rng,
            )?),
            ModelKind::FnnEmb | ModelKind::Cann => {
                let bias = if kind == ModelKind::Cann { 0.0 } else { log_freq };
                Network::Fnn(FnnNet::embedded(&mut store, &spec.fnn, k_num, &names, &sizes, bias, &mut rng)?)
            }
            ModelKind::LocalGlmNet => Network::LocalGlmNet(LocalGlmNet::new(
                &mut store,
                &spec.fnn,
                start_glm.as_ref().expect("start GLM fitted above"),
                &mut rng,
            )?),
            ModelKind::Ftt | ModelKind::Caftt | ModelKind::LocalGlmFtt => {
                let config = spec.ftt.clone();
                let trunk = FttTrunk::new(&mut store, &config, k_num, &names, &sizes, &mut rng)?;
                let head = match kind {
                    ModelKind::LocalGlmFtt => {
                        let features = preprocessor.transform(&train.subset(&[0]))?;
                        FttHead::local_glm(&mut store, &config, &features, start_glm.as_ref().expect("start GLM fitted above"))?
                    }
                    _ => FttHead::scalar(&mut store, &config, kind == ModelKind::Caftt, log_freq, &mut rng)?,
                };
                Network::Ftt { config, trunk, head }
            }
            _ => unreachable!("GLM kinds handled above"),
        };
        ModelBody::Neural(Box::new(NeuralModel {
            network,
            store,
            preprocessor,
            residual_glm,
            start_glm,
        }))
    };
    Ok(TrainedModel {
        kind,
        schema,
        spec: spec.clone(),
        body,
        rebalance: 1.0,
    })
}

/// Prediction of the GLM a hybrid is anchored to: the residual GLM for
/// CANN/CAFTT, the one-hot start GLM for the LocalGLM families.
pub fn anchor_glm_predict(m: &TrainedModel, d: &Dataset) -> Result<Vec<f64>> {
    let n = m
        .neural()
        .ok_or_else(|| Error::WrongKind(format!("{} has no GLM anchor", m.kind)))?;
    if let Some(g) = &n.residual_glm {
        return g.predict(d);
    }
    if let Some(p) = &n.start_glm {
        let x = n.preprocessor.transform(d)?.one_hot();
        return glm_predict(p, &x, &d.exposure);
    }
    Err(Error::WrongKind(format!("{} has no GLM anchor", m.kind)))
}
