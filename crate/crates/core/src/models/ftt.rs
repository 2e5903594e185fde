//! Feature-tokenizer transformer and its heads (plain, CAFTT residual and
//! LocalGLMftt).

use serde::{Deserialize, Serialize};

use super::input::ModelInput;
use crate::data::NeuralFeatures;
use crate::error::{Error, Result};
use crate::glm::GlmParams;
use crate::tensor::layers::{check_dropout_rate, check_heads, dropout, uniform};
use crate::tensor::{
    Activation, Dense, Embedding, ForwardCtx, Graph, LayerNorm, MultiHeadAttention, ParamId,
    ParamStore, Tensor, Var,
};
use crate::Rng64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FttConfig {
    pub d_emb: usize,
    pub blocks: usize,
    pub heads: usize,
    /// FFN hidden width after the ReGLU split; `floor(4/3 * d_emb)` when unset.
    pub d_ffn: Option<usize>,
    pub attention_dropout: f64,
    pub ffn_dropout: f64,
    /// Apply the attention pre-norm in the first block as well.
    pub first_block_prenorm: bool,
    /// LocalGLMftt: set every head-bias coordinate to 1 instead of the
    /// start-GLM betas on numerical features.
    pub head_bias_all_ones: bool,
    /// LocalGLMftt: train the intercept instead of freezing the start-GLM one.
    pub trainable_intercept: bool,
}

impl Default for FttConfig {
    fn default() -> Self {
        FttConfig {
            d_emb: 32,
            blocks: 3,
            heads: 8,
            d_ffn: None,
            attention_dropout: 0.2,
            ffn_dropout: 0.1,
            first_block_prenorm: false,
            head_bias_all_ones: false,
            trainable_intercept: false,
        }
    }
}

impl FttConfig {
    pub fn d_ffn(&self) -> usize {
        self.d_ffn.unwrap_or(self.d_emb * 4 / 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.blocks == 0 || self.d_ffn() == 0 {
            return Err(Error::Config("FTT needs d_emb, blocks and d_ffn >= 1".into()));
        }
        check_heads(self.d_emb, self.heads)?;
        check_dropout_rate(self.attention_dropout)?;
        check_dropout_rate(self.ffn_dropout)
    }
}

/// Linear numerical embeddings, categorical lookup tables with a bias per
/// feature, and the cls token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTokenizer {
    /// `[k_num, d_emb]`, row `j` is `W_j`.
    pub num_weight: ParamId,
    /// `[k_num, d_emb]`, row `j` is `b_j`.
    pub num_bias: ParamId,
    pub cat_tables: Vec<Embedding>,
    pub cat_bias: Vec<ParamId>,
    /// `[1, d_emb]`.
    pub cls: ParamId,
}

impl FeatureTokenizer {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        k_num: usize,
        cat_names: &[String],
        cat_sizes: &[usize],
        rng: &mut Rng64,
    ) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let num_weight = store.add("tokenizer.num.w", uniform(rng, &[k_num, d], bound));
        let num_bias = store.add("tokenizer.num.b", uniform(rng, &[k_num, d], bound));
        let mut cat_tables = Vec::new();
        let mut cat_bias = Vec::new();
        for (name, &s) in cat_names.iter().zip(cat_sizes) {
            cat_tables.push(Embedding::new(
                store,
                &format!("tokenizer.{name}"),
                uniform(rng, &[s, d], bound),
            ));
            cat_bias.push(store.add(format!("tokenizer.{name}.b"), uniform(rng, &[1, d], bound)));
        }
        let cls = store.add("tokenizer.cls", uniform(rng, &[1, d], bound));
        FeatureTokenizer {
            num_weight,
            num_bias,
            cat_tables,
            cat_bias,
            cls,
        }
    }

    pub fn k(&self, store: &ParamStore) -> usize {
        store.get(self.num_weight).shape()[0] + self.cat_tables.len()
    }

    /// `[B, k + 1, d_emb]` stack with the cls token in row 0 and feature
    /// tokens (numerical first, then categorical) in `order`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: &NeuralFeatures,
        order: Option<&[usize]>,
    ) -> Result<Var> {
        let b = f.rows;
        let k_num = f.k_num();
        let d = store.get(self.cls).len();
        if store.get(self.num_weight).shape()[0] != k_num || self.cat_tables.len() != f.k_cat() {
            return Err(Error::shape(
                "tokenize",
                format!("input has {k_num} numerical and {} categorical features", f.k_cat()),
            ));
        }
        let w = g.param(store, self.num_weight)?;
        let bias = g.param(store, self.num_bias)?;
        let mut tokens = Vec::with_capacity(k_num + f.k_cat());
        for j in 0..k_num {
            let xj = g.constant(Tensor::matrix(b, 1, (0..b).map(|i| f.num_row(i)[j]).collect())?)?;
            let wj = g.select(w, 0, vec![j])?;
            let bj = g.select(bias, 0, vec![j])?;
            let t = g.matmul(xj, wj)?;
            let t = g.add_row(t, bj)?;
            tokens.push(g.reshape(t, vec![b, 1, d])?);
        }
        for (j, (table, bias)) in self.cat_tables.iter().zip(&self.cat_bias).enumerate() {
            let ids = (0..b).map(|i| f.cat_row(i)[j]).collect();
            let t = table.forward(g, store, ids)?;
            let bj = g.param(store, *bias)?;
            let t = g.add_row(t, bj)?;
            tokens.push(g.reshape(t, vec![b, 1, d])?);
        }
        let cls = g.param(store, self.cls)?;
        let mut stack = vec![g.repeat(cls, b)?];
        match order {
            Some(order) => {
                let mut seen = order.to_vec();
                seen.sort_unstable();
                if seen != (0..tokens.len()).collect::<Vec<_>>() {
                    return Err(Error::Config(format!("token order {order:?} is not a permutation")));
                }
                stack.extend(order.iter().map(|&i| tokens[i]));
            }
            None => stack.extend(tokens),
        }
        g.concat(&stack, 1)
    }
}

/// Pre-norm encoder block: attention and ReGLU FFN, each with a residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerBlock {
    pub attention_norm: Option<LayerNorm>,
    pub attention: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Dense,
    pub ffn_out: Dense,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, index: usize, cfg: &FttConfig, rng: &mut Rng64) -> Result<Self> {
        let d = cfg.d_emb;
        let name = format!("block{}", index + 1);
        let bound = 1.0 / (d as f64).sqrt();
        let attention_norm = (index > 0 || cfg.first_block_prenorm)
            .then(|| LayerNorm::new(store, &format!("{name}.attention_norm"), d));
        let attention = MultiHeadAttention::new(store, &format!("{name}.attention"), d, cfg.heads, rng)?;
        let ffn_norm = LayerNorm::new(store, &format!("{name}.ffn_norm"), d);
        let h = cfg.d_ffn();
        let ffn_in = Dense::new(
            store,
            &format!("{name}.ffn_in"),
            uniform(rng, &[d, 2 * h], bound),
            uniform(rng, &[2 * h], bound),
            Activation::Linear,
        )?;
        let ffn_out = Dense::new(
            store,
            &format!("{name}.ffn_out"),
            uniform(rng, &[h, d], bound),
            uniform(rng, &[d], bound),
            Activation::Linear,
        )?;
        Ok(TransformerBlock {
            attention_norm,
            attention,
            ffn_norm,
            ffn_in,
            ffn_out,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: Var,
        cfg: &FttConfig,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let h = match &self.attention_norm {
            Some(n) => n.forward(g, store, s)?,
            None => s,
        };
        let a = self.attention.forward(g, store, h, cfg.attention_dropout, ctx)?;
        let s = g.add(s, a)?;
        let h = self.ffn_norm.forward(g, store, s)?;
        let h = self.ffn_in.forward(g, store, h)?;
        let h = g.reglu(h)?;
        let h = dropout(g, h, cfg.ffn_dropout, ctx)?;
        let h = self.ffn_out.forward(g, store, h)?;
        g.add(s, h)
    }
}

/// Tokenizer, blocks and the final norm; yields `ReLU(LayerNorm(cls))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FttTrunk {
    pub tokenizer: FeatureTokenizer,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
}

impl FttTrunk {
    pub fn new(
        store: &mut ParamStore,
        cfg: &FttConfig,
        k_num: usize,
        cat_names: &[String],
        cat_sizes: &[usize],
        rng: &mut Rng64,
    ) -> Result<Self> {
        cfg.validate()?;
        let tokenizer = FeatureTokenizer::new(store, cfg.d_emb, k_num, cat_names, cat_sizes, rng);
        let blocks = (0..cfg.blocks)
            .map(|l| TransformerBlock::new(store, l, cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(store, "final_norm", cfg.d_emb);
        Ok(FttTrunk {
            tokenizer,
            blocks,
            final_norm,
        })
    }

    /// `[B, d_emb]` representation of the cls token.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: &NeuralFeatures,
        cfg: &FttConfig,
        ctx: &mut ForwardCtx<'_>,
        order: Option<&[usize]>,
    ) -> Result<Var> {
        let mut s = self.tokenizer.forward(g, store, f, order)?;
        for b in &self.blocks {
            s = b.forward(g, store, s, cfg, ctx)?;
        }
        let cls = g.select(s, 1, vec![0])?;
        let cls = g.reshape(cls, vec![f.rows, cfg.d_emb])?;
        let cls = self.final_norm.forward(g, store, cls)?;
        g.relu(cls)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "snake_case")]
pub enum FttHead {
    /// `w0 + <w, r>`: FTT and CAFTT.
    Scalar { dense: Dense },
    /// `beta0 + <beta_FTT(r), x~>` with `x~` the scaled numerical values and
    /// one trainable scalar per categorical level.
    LocalGlm {
        dense: Dense,
        level_scalars: Vec<Embedding>,
        beta0: ParamId,
    },
}

impl FttHead {
    /// FTT: uniform weights, bias `log_rate`; CAFTT passes `zero = true`.
    pub fn scalar(store: &mut ParamStore, cfg: &FttConfig, zero: bool, bias: f64, rng: &mut Rng64) -> Result<Self> {
        let d = cfg.d_emb;
        let w = if zero {
            Tensor::zeros(&[d, 1])
        } else {
            uniform(rng, &[d, 1], 1.0 / (d as f64).sqrt())
        };
        let b = if zero { 0.0 } else { bias };
        Ok(FttHead::Scalar {
            dense: Dense::new(store, "head", w, Tensor::vector(vec![b]), Activation::Linear)?,
        })
    }

    /// LocalGLMftt head started from a one-hot GLM on the same features.
    pub fn local_glm(
        store: &mut ParamStore,
        cfg: &FttConfig,
        features: &NeuralFeatures,
        start: &GlmParams,
    ) -> Result<Self> {
        let beta_of = |label: &str| {
            start
                .beta(label)
                .ok_or_else(|| Error::Config(format!("start GLM has no column `{label}`")))
        };
        let k = features.k_num() + features.k_cat();
        let mut bias = Vec::with_capacity(k);
        for name in &features.num_names {
            bias.push(if cfg.head_bias_all_ones { 1.0 } else { beta_of(name)? });
        }
        bias.extend(std::iter::repeat_n(1.0, features.k_cat()));
        let dense = Dense::new(
            store,
            "head",
            Tensor::zeros(&[cfg.d_emb, k]),
            Tensor::vector(bias),
            Activation::Linear,
        )?;
        let mut level_scalars = Vec::new();
        for (name, levels) in features.cat_names.iter().zip(&features.cat_levels) {
            let values = levels
                .iter()
                .map(|l| beta_of(&format!("{name}={l}")))
                .collect::<Result<Vec<_>>>()?;
            level_scalars.push(Embedding::new(
                store,
                &format!("skip.{name}"),
                Tensor::matrix(levels.len(), 1, values)?,
            ));
        }
        let intercept = Tensor::vector(vec![start.intercept]);
        let beta0 = if cfg.trainable_intercept {
            store.add("skip.beta0", intercept)
        } else {
            store.add_frozen("skip.beta0", intercept)
        };
        Ok(FttHead::LocalGlm {
            dense,
            level_scalars,
            beta0,
        })
    }

    /// `[B, k]` attentions and `[B, k]` skip inputs `x~` (LocalGLM head only).
    pub fn attentions(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        r: Var,
        x: &ModelInput,
    ) -> Result<(Var, Var)> {
        let FttHead::LocalGlm {
            dense,
            level_scalars,
            ..
        } = self
        else {
            return Err(Error::WrongKind("model kind has no GLM skip".into()));
        };
        let beta = dense.forward(g, store, r)?;
        let mut parts = vec![x.num_const(g)?];
        for (j, e) in level_scalars.iter().enumerate() {
            parts.push(e.forward(g, store, x.cat_ids(j))?);
        }
        let xt = g.concat(&parts, 1)?;
        Ok((beta, xt))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, r: Var, x: &ModelInput) -> Result<Var> {
        match self {
            FttHead::Scalar { dense } => dense.forward(g, store, r),
            FttHead::LocalGlm { beta0, .. } => {
                let (beta, xt) = self.attentions(g, store, r, x)?;
                let s = g.row_dot(beta, xt)?;
                let b0 = g.param(store, *beta0)?;
                g.add_row(s, b0)
            }
        }
    }
}
