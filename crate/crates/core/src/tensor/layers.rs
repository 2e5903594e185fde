//! Neural building blocks expressed on a [`Graph`].
//!
//! Each layer owns [`ParamId`]s into a [`ParamStore`]; the math lives in
//! free functions over [`Var`]s so that the eager helpers in
//! [`super::ops`] run the exact same code.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::Rng64;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    Exp,
}

pub fn activate(g: &mut Graph, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Linear => Ok(x),
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
        Activation::Exp => g.exp(x),
    }
}

/// Train/inference switch plus the generator that drives dropout masks.
pub struct ForwardCtx<'a> {
    pub training: bool,
    pub rng: Option<&'a mut Rng64>,
}

impl<'a> ForwardCtx<'a> {
    pub fn inference() -> Self {
        ForwardCtx {
            training: false,
            rng: None,
        }
    }

    pub fn training(rng: &'a mut Rng64) -> Self {
        ForwardCtx {
            training: true,
            rng: Some(rng),
        }
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
    check_dropout_rate(rate)?;
    if !ctx.training || rate == 0.0 {
        return Ok(x);
    }
    let rng = ctx
        .rng
        .as_deref_mut()
        .ok_or_else(|| Error::Contract("training-mode dropout needs a generator".into()))?;
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    g.mask_mul(x, mask)
}

pub fn dense_vars(g: &mut Graph, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let h = g.linear(x, w, b)?;
    activate(g, h, act)
}

pub fn layer_norm_vars(g: &mut Graph, x: Var, gain: Var, offset: Var) -> Result<Var> {
    let d = g.value(x).last_dim();
    if g.value(gain).len() != d || g.value(offset).len() != d {
        return Err(Error::shape(
            "layer_norm",
            format!("gain/offset length must equal last dim {d}"),
        ));
    }
    let n = g.normalize(x, LAYER_NORM_EPS)?;
    let s = g.mul_row(n, gain)?;
    g.add_row(s, offset)
}

/// Projection variables for one attention layer, in the order
/// query, key, value, output (weight then bias each).
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

pub fn check_heads(d_emb: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d_emb % heads != 0 {
        return Err(Error::Config(format!(
            "embedding dimension {d_emb} is not divisible by {heads} heads"
        )));
    }
    Ok(d_emb / heads)
}

/// Multi-head scaled dot-product self-attention over `s [B, T, d_emb]`.
/// Dropout acts on the attention weight matrix.
pub fn attention_vars(
    g: &mut Graph,
    s: Var,
    p: &AttentionVars,
    heads: usize,
    attn_dropout: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var> {
    let shape = g.value(s).shape().to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::shape("attention", format!("input {shape:?}, want [B, T>=1, d]")));
    }
    let d_key = check_heads(shape[2], heads)?;
    let q = g.linear(s, p.wq, p.bq)?;
    let k = g.linear(s, p.wk, p.bk)?;
    let v = g.linear(s, p.wv, p.bv)?;
    let q = g.split_heads(q, heads)?;
    let k = g.split_heads(k, heads)?;
    let v = g.split_heads(v, heads)?;
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (d_key as f64).sqrt())?;
    let weights = g.softmax(scores)?;
    let weights = dropout(g, weights, attn_dropout, ctx)?;
    let mixed = g.batch_matmul(weights, v, false)?;
    let merged = g.merge_heads(mixed, heads)?;
    g.linear(merged, p.wo, p.bo)
}

/// Uniform initialisation on `[-bound, bound]`.
pub fn uniform(rng: &mut Rng64, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

pub fn glorot_uniform(rng: &mut Rng64, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], bound)
}

/// Store-backed dense layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        weights: Tensor,
        bias: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        let ws = weights.shape().to_vec();
        if ws.len() != 2 || ws[1] == 0 || bias.len() != ws[1] {
            return Err(Error::Config(format!(
                "dense layer `{name}`: weights {ws:?} with bias of {}",
                bias.len()
            )));
        }
        Ok(Dense {
            w: store.add(format!("{name}.w"), weights),
            b: store.add(format!("{name}.b"), bias),
            activation,
        })
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        dense_vars(g, x, w, b, self.activation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            offset: store.add(format!("{name}.offset"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain)?;
        let offset = g.param(store, self.offset)?;
        layer_norm_vars(g, x, gain, offset)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
}

impl MultiHeadAttention {
    /// All projections drawn from `U[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_emb: usize,
        heads: usize,
        rng: &mut Rng64,
    ) -> Result<Self> {
        check_heads(d_emb, heads)?;
        let bound = 1.0 / (d_emb as f64).sqrt();
        let mut mk = |suffix: &str, shape: &[usize]| {
            store.add(format!("{name}.{suffix}"), uniform(rng, shape, bound))
        };
        Ok(MultiHeadAttention {
            wq: mk("wq", &[d_emb, d_emb]),
            bq: mk("bq", &[d_emb]),
            wk: mk("wk", &[d_emb, d_emb]),
            bk: mk("bk", &[d_emb]),
            wv: mk("wv", &[d_emb, d_emb]),
            bv: mk("bv", &[d_emb]),
            wo: mk("wo", &[d_emb, d_emb]),
            bo: mk("bo", &[d_emb]),
            heads,
        })
    }

    pub fn vars(&self, g: &mut Graph, store: &ParamStore) -> Result<AttentionVars> {
        Ok(AttentionVars {
            wq: g.param(store, self.wq)?,
            bq: g.param(store, self.bq)?,
            wk: g.param(store, self.wk)?,
            bk: g.param(store, self.bk)?,
            wv: g.param(store, self.wv)?,
            bv: g.param(store, self.bv)?,
            wo: g.param(store, self.wo)?,
            bo: g.param(store, self.bo)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: Var,
        attn_dropout: f64,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let vars = self.vars(g, store)?;
        attention_vars(g, s, &vars, self.heads, attn_dropout, ctx)
    }
}

/// Lookup table with one row per categorical level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub name: String,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, table: Tensor) -> Self {
        Embedding {
            table: store.add(format!("{name}.table"), table),
            name: name.to_string(),
        }
    }

    pub fn levels(&self, store: &ParamStore) -> usize {
        store.get(self.table).shape()[0]
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        index: Vec<usize>,
    ) -> Result<Var> {
        let t = g.param(store, self.table)?;
        g.gather(t, index, &self.name)
    }
}
