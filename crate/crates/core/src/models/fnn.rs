//! Feed-forward networks: the one-hot and embedding FNNs, the CANN residual
//! network and LocalGLMnet.

use serde::{Deserialize, Serialize};

use super::input::ModelInput;
use crate::error::{Error, Result};
use crate::glm::GlmParams;
use crate::tensor::layers::{glorot_uniform, uniform};
use crate::tensor::{Activation, Dense, Embedding, Graph, ParamId, ParamStore, Tensor, Var};
use crate::Rng64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnnSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Width of each categorical embedding in the embedding variants.
    pub embedding_dim: usize,
    /// Embedding tables start from `U(-b, b)`.
    pub embedding_init: f64,
}

impl Default for FnnSpec {
    fn default() -> Self {
        FnnSpec {
            hidden: vec![20, 15, 10],
            activation: Activation::Tanh,
            embedding_dim: 2,
            embedding_init: 0.05,
        }
    }
}

impl FnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths {:?} must be non-empty and positive", self.hidden)));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Stack of hidden dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        spec: &FnnSpec,
        rng: &mut Rng64,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = input;
        for (m, &q) in spec.hidden.iter().enumerate() {
            layers.push(Dense::new(
                store,
                &format!("{name}.hidden{}", m + 1),
                glorot_uniform(rng, fan_in, q),
                Tensor::zeros(&[q]),
                spec.activation,
            )?);
            fan_in = q;
        }
        Ok(Mlp { layers })
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim(store))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(g, store, x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum FnnInput {
    /// Scaled numerical columns plus one-hot columns.
    OneHot,
    /// Scaled numerical columns plus one embedding per categorical feature.
    Embedded { tables: Vec<Embedding> },
}

/// `log(frequency) = w0 + <w, z(x)>`; the exposure (or CANN's GLM offset)
/// is added outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnnNet {
    pub input: FnnInput,
    pub hidden: Mlp,
    pub output: Dense,
}

fn zero_output(store: &mut ParamStore, width: usize, bias: f64) -> Result<Dense> {
    Dense::new(
        store,
        "output",
        Tensor::zeros(&[width, 1]),
        Tensor::vector(vec![bias]),
        Activation::Linear,
    )
}

impl FnnNet {
    /// FNN on `width` one-hot-design columns; output weights zero and bias
    /// `output_bias`.
    pub fn one_hot(
        store: &mut ParamStore,
        spec: &FnnSpec,
        width: usize,
        output_bias: f64,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let hidden = Mlp::new(store, "fnn", width, spec, rng)?;
        let output = zero_output(store, hidden.out_dim(store), output_bias)?;
        Ok(FnnNet {
            input: FnnInput::OneHot,
            hidden,
            output,
        })
    }

    /// FNN on scaled numericals plus `embedding_dim`-wide categorical
    /// embeddings.
    pub fn embedded(
        store: &mut ParamStore,
        spec: &FnnSpec,
        k_num: usize,
        cat_names: &[String],
        cat_sizes: &[usize],
        output_bias: f64,
        rng: &mut Rng64,
    ) -> Result<Self> {
        spec.validate()?;
        let tables = cat_names
            .iter()
            .zip(cat_sizes)
            .map(|(name, &s)| {
                Embedding::new(
                    store,
                    &format!("embedding.{name}"),
                    uniform(rng, &[s, spec.embedding_dim], spec.embedding_init),
                )
            })
            .collect::<Vec<_>>();
        let width = k_num + cat_sizes.len() * spec.embedding_dim;
        let hidden = Mlp::new(store, "fnn", width, spec, rng)?;
        let output = zero_output(store, hidden.out_dim(store), output_bias)?;
        Ok(FnnNet {
            input: FnnInput::Embedded { tables },
            hidden,
            output,
        })
    }

    fn design(&self, g: &mut Graph, store: &ParamStore, x: &ModelInput) -> Result<Var> {
        match &self.input {
            FnnInput::OneHot => x.dense_const(g),
            FnnInput::Embedded { tables } => {
                let mut parts = vec![x.num_const(g)?];
                for (j, t) in tables.iter().enumerate() {
                    parts.push(t.forward(g, store, x.cat_ids(j))?);
                }
                g.concat(&parts, 1)
            }
        }
    }

    /// `[B, 1]` log-frequency before the offset.
    pub fn log_rate(&self, g: &mut Graph, store: &ParamStore, x: &ModelInput) -> Result<Var> {
        let d = self.design(g, store, x)?;
        let z = self.hidden.forward(g, store, d)?;
        self.output.forward(g, store, z)
    }
}

/// `log(frequency) = beta0 + alpha <beta(x), x>` with the attention network
/// `beta(x)` as wide as its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalGlmNet {
    pub hidden: Mlp,
    pub beta: Dense,
    pub alpha: ParamId,
    pub beta0: ParamId,
}

impl LocalGlmNet {
    /// Starts from `start`: zero last-layer weights, bias = GLM betas, so the
    /// initial prediction is the start GLM's.
    pub fn new(store: &mut ParamStore, spec: &FnnSpec, start: &GlmParams, rng: &mut Rng64) -> Result<Self> {
        let width = start.coefficients.len();
        if width == 0 {
            return Err(Error::Config("LocalGLMnet needs a start GLM with covariates".into()));
        }
        let hidden = Mlp::new(store, "localglmnet", width, spec, rng)?;
        let beta = Dense::new(
            store,
            "localglmnet.beta",
            Tensor::zeros(&[hidden.out_dim(store), width]),
            Tensor::vector(start.betas()),
            Activation::Linear,
        )?;
        let alpha = store.add("localglmnet.alpha", Tensor::vector(vec![1.0]));
        let beta0 = store.add("localglmnet.beta0", Tensor::vector(vec![start.intercept]));
        Ok(LocalGlmNet {
            hidden,
            beta,
            alpha,
            beta0,
        })
    }

    /// `[B, k]` raw attentions `beta(x)` and the design they multiply; the
    /// effective attention is `alpha * beta(x)`.
    pub fn attentions(&self, g: &mut Graph, store: &ParamStore, x: &ModelInput) -> Result<(Var, Var)> {
        let d = x.dense_const(g)?;
        if g.value(d).last_dim() != store.get(self.beta.b).len() {
            return Err(Error::shape(
                "localglmnet",
                format!("input width {} vs attention width {}", g.value(d).last_dim(), store.get(self.beta.b).len()),
            ));
        }
        let z = self.hidden.forward(g, store, d)?;
        Ok((self.beta.forward(g, store, z)?, d))
    }

    pub fn log_rate(&self, g: &mut Graph, store: &ParamStore, x: &ModelInput) -> Result<Var> {
        let (b, d) = self.attentions(g, store, x)?;
        let s = g.row_dot(b, d)?;
        let alpha = g.param(store, self.alpha)?;
        let s = g.mul_row(s, alpha)?;
        let beta0 = g.param(store, self.beta0)?;
        g.add_row(s, beta0)
    }
}
