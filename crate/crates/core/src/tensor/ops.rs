//! Eager versions of the building blocks, for inspection and tests.
//! Every function records a throwaway [`Graph`] and returns its value.

use serde::{Deserialize, Serialize};

use super::layers::{self, Activation, AttentionVars, ForwardCtx};
use super::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::Rng64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    /// `q_in x q_out`
    pub weights: Tensor,
    /// `q_out`
    pub bias: Tensor,
    pub activation: Activation,
}

/// Query/key/value/output projections (`d_emb x d_emb` each, heads side by
/// side) with their biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub heads: usize,
}

impl AttentionParams {
    pub fn d_emb(&self) -> usize {
        self.wq.shape().first().copied().unwrap_or(0)
    }

    pub fn d_key(&self) -> Result<usize> {
        layers::check_heads(self.d_emb(), self.heads)
    }
}

pub fn dense_forward(x: &Tensor, p: &DenseLayerParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let w = g.constant(p.weights.clone())?;
    let b = g.constant(p.bias.clone())?;
    let y = layers::dense_vars(&mut g, xv, w, b, p.activation)?;
    Ok(g.value(y).clone())
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, offset: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let gv = g.constant(gain.clone())?;
    let ov = g.constant(offset.clone())?;
    let y = layers::layer_norm_vars(&mut g, xv, gv, ov)?;
    Ok(g.value(y).clone())
}

/// `s` is `rows x d_emb` (a single token stack) or `batch x rows x d_emb`.
pub fn multi_head_attention(
    s: &Tensor,
    p: &AttentionParams,
    attn_dropout: f64,
    training: bool,
    rng: Option<&mut Rng64>,
) -> Result<Tensor> {
    let input = match s.shape().len() {
        2 => s.clone().reshaped(vec![1, s.shape()[0], s.shape()[1]])?,
        3 => s.clone(),
        _ => return Err(Error::shape("multi_head_attention", format!("{:?}", s.shape()))),
    };
    let mut g = Graph::new();
    let sv = g.constant(input)?;
    let vars = AttentionVars {
        wq: g.constant(p.wq.clone())?,
        bq: g.constant(p.bq.clone())?,
        wk: g.constant(p.wk.clone())?,
        bk: g.constant(p.bk.clone())?,
        wv: g.constant(p.wv.clone())?,
        bv: g.constant(p.bv.clone())?,
        wo: g.constant(p.wo.clone())?,
        bo: g.constant(p.bo.clone())?,
    };
    let mut ctx = ForwardCtx { training, rng };
    let y = layers::attention_vars(&mut g, sv, &vars, p.heads, attn_dropout, &mut ctx)?;
    g.value(y).clone().reshaped(s.shape().to_vec())
}

pub fn reglu(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let y = g.reglu(xv)?;
    Ok(g.value(y).clone())
}

pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut Rng64) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let mut ctx = ForwardCtx {
        training,
        rng: Some(rng),
    };
    let y = layers::dropout(&mut g, xv, rate, &mut ctx)?;
    Ok(g.value(y).clone())
}

pub fn embedding_lookup(table: &Tensor, index: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let t = g.constant(table.clone())?;
    let y = g.gather(t, vec![index], "embedding")?;
    let d = g.value(y).len();
    g.value(y).clone().reshaped(vec![d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn dense_zero_parametrization_is_zero() {
        let p = DenseLayerParams {
            weights: Tensor::zeros(&[3, 2]),
            bias: Tensor::zeros(&[2]),
            activation: Activation::Linear,
        };
        let y = dense_forward(&Tensor::vector(vec![1.0, -4.0, 2.5]), &p).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_tanh() {
        let p = DenseLayerParams {
            weights: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
            activation: Activation::Linear,
        };
        let y = dense_forward(&Tensor::vector(vec![1.0, 2.0]), &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let p = DenseLayerParams {
            weights: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
            bias: Tensor::vector(vec![-1.0]),
            activation: Activation::Tanh,
        };
        let y = dense_forward(&Tensor::vector(vec![1.0]), &p).unwrap();
        assert!((y.data()[0] - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn dense_rejects_width_mismatch() {
        let p = DenseLayerParams {
            weights: Tensor::zeros(&[3, 2]),
            bias: Tensor::zeros(&[2]),
            activation: Activation::Linear,
        };
        assert!(matches!(
            dense_forward(&Tensor::vector(vec![1.0, 2.0]), &p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::filled(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let y = layer_norm(&Tensor::vector(vec![5.0, 5.0]), &ones, &zeros).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let y = layer_norm(&Tensor::vector(vec![1.0, 3.0]), &ones, &zeros).unwrap();
        // variance 1 plus epsilon 1e-5 under the square root
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!(approx(y.data(), &[-expect, expect], 1e-15));
        let offset = Tensor::vector(vec![0.3, -0.7]);
        let y = layer_norm(&Tensor::vector(vec![1.0, 9.0]), &zeros, &offset).unwrap();
        assert_eq!(y.data(), offset.data());
    }

    #[test]
    fn layer_norm_zero_axis_is_error() {
        let x = Tensor::new(vec![2, 0], vec![]).unwrap();
        assert!(layer_norm(&x, &Tensor::vector(vec![]), &Tensor::vector(vec![])).is_err());
    }

    #[test]
    fn reglu_examples() {
        assert_eq!(reglu(&Tensor::vector(vec![3.0, 4.0, -1.0, -2.0])).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(reglu(&Tensor::vector(vec![2.0, -3.0, 1.0, 4.0])).unwrap().data(), &[2.0, -12.0]);
        assert_eq!(reglu(&Tensor::vector(vec![1.75, 1.0])).unwrap().data(), &[1.75]);
        assert!(reglu(&Tensor::vector(vec![1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn dropout_identity_cases_and_bad_rate() {
        let mut rng = Rng64::seed_from_u64(1);
        let x = Tensor::from_fn(&[100], |i| i as f64);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, true, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_preserves_mean_in_training() {
        // Monte Carlo over seeds: E[dropout(x)] = x, so the sample mean of
        // a large all-ones tensor stays within 1%.
        let x = Tensor::filled(&[200_000], 1.0);
        for seed in 0..5 {
            let mut rng = Rng64::seed_from_u64(seed);
            let y = dropout(&x, 0.5, true, &mut rng).unwrap();
            let mean = y.sum() / y.len() as f64;
            assert!((mean - 1.0).abs() < 0.01, "seed {seed}: mean {mean}");
            assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        }
    }

    #[test]
    fn embedding_lookup_examples() {
        let table = Tensor::from_fn(&[4, 3], |i| i as f64);
        assert_eq!(embedding_lookup(&table, 2).unwrap().data(), &[6.0, 7.0, 8.0]);
        let single = Tensor::vector(vec![0.5, 0.25]).reshaped(vec![1, 2]).unwrap();
        assert_eq!(embedding_lookup(&single, 0).unwrap().data(), &[0.5, 0.25]);
        assert!(matches!(embedding_lookup(&table, 4), Err(Error::Lookup { .. })));
        // one-hot formulation e^T W equals the row lookup
        let e = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]);
        let p = DenseLayerParams {
            weights: table.clone(),
            bias: Tensor::zeros(&[3]),
            activation: Activation::Linear,
        };
        assert_eq!(dense_forward(&e, &p).unwrap(), embedding_lookup(&table, 2).unwrap());
    }

    fn attention_params(d: usize, heads: usize, seed: u64) -> AttentionParams {
        let mut rng = Rng64::seed_from_u64(seed);
        let mut u = |shape: &[usize]| layers::uniform(&mut rng, shape, 0.5);
        AttentionParams {
            wq: u(&[d, d]),
            bq: u(&[d]),
            wk: u(&[d, d]),
            bk: u(&[d]),
            wv: u(&[d, d]),
            bv: u(&[d]),
            wo: u(&[d, d]),
            bo: u(&[d]),
            heads,
        }
    }

    #[test]
    fn attention_single_token_is_projected_value() {
        let p = attention_params(8, 2, 3);
        let s = Tensor::from_fn(&[1, 8], |i| (i as f64 * 0.37).sin());
        let out = multi_head_attention(&s, &p, 0.0, false, None).unwrap();
        let v = dense_forward(
            &s,
            &DenseLayerParams {
                weights: p.wv.clone(),
                bias: p.bv.clone(),
                activation: Activation::Linear,
            },
        )
        .unwrap();
        let expect = dense_forward(
            &v,
            &DenseLayerParams {
                weights: p.wo.clone(),
                bias: p.bo.clone(),
                activation: Activation::Linear,
            },
        )
        .unwrap();
        assert!(approx(out.data(), expect.data(), 1e-14));
    }

    #[test]
    fn attention_zero_values_give_output_bias() {
        let mut p = attention_params(8, 4, 5);
        p.wv = Tensor::zeros(&[8, 8]);
        p.bv = Tensor::zeros(&[8]);
        let s = Tensor::from_fn(&[5, 8], |i| (i as f64).cos());
        let out = multi_head_attention(&s, &p, 0.0, false, None).unwrap();
        for r in 0..5 {
            assert!(approx(out.row(r), p.bo.data(), 1e-15));
        }
    }

    #[test]
    fn attention_head_geometry() {
        let p = attention_params(32, 8, 1);
        assert_eq!(p.d_key().unwrap(), 4);
        let bad = attention_params(30, 8, 1);
        assert!(matches!(bad.d_key(), Err(Error::Config(_))));
        let s = Tensor::zeros(&[3, 30]);
        assert!(matches!(
            multi_head_attention(&s, &bad, 0.0, false, None),
            Err(Error::Config(_))
        ));
    }
}
