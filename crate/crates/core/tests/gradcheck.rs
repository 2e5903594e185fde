mod common;

use claimfreq::models::build_model;
use claimfreq::models::ftt::{FttConfig, TransformerBlock};
use claimfreq::rng_from_seed;
use claimfreq::tensor::gradcheck::{check_gradients, worst};
use claimfreq::tensor::layers::{uniform, Activation};
use claimfreq::tensor::{Dense, Embedding, ForwardCtx, Graph, LayerNorm, MultiHeadAttention, ParamStore, Var};
use claimfreq::Result;

use common::{perturb, small_data, tiny_spec, NEURAL};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const DRAWS: u64 = 5;

/// `sum(x * c)` for a fixed random `c`, so every output entry matters.
fn probe(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let c = uniform(&mut rng_from_seed(seed ^ 0xABCD), &shape, 1.0);
    let c = g.constant(c)?;
    let m = g.mul(x, c)?;
    g.sum(m)
}

fn input(store: &mut ParamStore, shape: &[usize], seed: u64) -> claimfreq::tensor::ParamId {
    store.add("input", uniform(&mut rng_from_seed(seed), shape, 1.0))
}

fn assert_block(name: &str, store: &ParamStore, f: impl Fn(&ParamStore) -> Result<(Graph, Var)>) {
    let checks = check_gradients(store, H, f).unwrap();
    assert!(!checks.is_empty());
    let w = worst(&checks);
    assert!(w < TOL, "{name}: worst relative error {w:e} in {checks:?}");
}

#[test]
fn dense_layers() {
    for draw in 0..DRAWS {
        for act in [Activation::Tanh, Activation::Relu, Activation::Linear] {
            let mut rng = rng_from_seed(draw);
            let mut s = ParamStore::new();
            let x = input(&mut s, &[5, 4], draw + 10);
            let d = Dense::new(&mut s, "d", uniform(&mut rng, &[4, 3], 1.0), uniform(&mut rng, &[3], 1.0), act).unwrap();
            assert_block("dense", &s, |s| {
                let mut g = Graph::new();
                let xv = g.param(s, x)?;
                let y = d.forward(&mut g, s, xv)?;
                let r = probe(&mut g, y, draw)?;
                Ok((g, r))
            });
        }
    }
}

#[test]
fn layer_norm() {
    for draw in 0..DRAWS {
        let mut s = ParamStore::new();
        let x = input(&mut s, &[2, 3, 6], draw);
        let ln = LayerNorm::new(&mut s, "ln", 6);
        perturb(&mut s, 0.5, draw + 1).unwrap();
        assert_block("layer norm", &s, |s| {
            let mut g = Graph::new();
            let xv = g.param(s, x)?;
            let y = ln.forward(&mut g, s, xv)?;
            let r = probe(&mut g, y, draw)?;
            Ok((g, r))
        });
    }
}

#[test]
fn softmax_reglu_exp_and_row_ops() {
    for draw in 0..DRAWS {
        let mut s = ParamStore::new();
        let x = input(&mut s, &[4, 6], draw);
        let row = input(&mut s, &[6], draw + 100);
        let other = input(&mut s, &[4, 6], draw + 200);
        assert_block("elementwise", &s, |s| {
            let mut g = Graph::new();
            let xv = g.param(s, x)?;
            let rv = g.param(s, row)?;
            let ov = g.param(s, other)?;
            let a = g.softmax(xv)?;
            let b = g.reglu(xv)?;
            let c = g.add_row(xv, rv)?;
            let c = g.mul_row(c, rv)?;
            let c = g.tanh(c)?;
            let d = g.row_dot(c, ov)?;
            let e = g.exp(d)?;
            let (pa, pb, pe) = (probe(&mut g, a, draw)?, probe(&mut g, b, draw + 1)?, probe(&mut g, e, draw + 2)?);
            let t = g.add(pa, pb)?;
            let t = g.add(t, pe)?;
            let m = g.mean(xv)?;
            let r = g.add(t, m)?;
            Ok((g, r))
        });
    }
}

#[test]
fn embedding_lookup_and_concat() {
    for draw in 0..DRAWS {
        let mut rng = rng_from_seed(draw);
        let mut s = ParamStore::new();
        let e = Embedding::new(&mut s, "e", uniform(&mut rng, &[4, 3], 1.0));
        let x = input(&mut s, &[5, 2], draw + 7);
        let idx = vec![0, 3, 3, 1, 2];
        assert_block("embedding", &s, |s| {
            let mut g = Graph::new();
            let t = e.forward(&mut g, s, idx.clone())?;
            let xv = g.param(s, x)?;
            let c = g.concat(&[t, xv], 1)?;
            let sel = g.select(c, 1, vec![4, 0, 2])?;
            let r = probe(&mut g, sel, draw)?;
            Ok((g, r))
        });
    }
}

#[test]
fn multi_head_attention() {
    for draw in 0..DRAWS {
        let mut rng = rng_from_seed(draw);
        let mut s = ParamStore::new();
        let x = input(&mut s, &[3, 4, 8], draw + 50);
        let mha = MultiHeadAttention::new(&mut s, "mha", 8, 2, &mut rng).unwrap();
        assert_block("attention", &s, |s| {
            let mut g = Graph::new();
            let xv = g.param(s, x)?;
            let y = mha.forward(&mut g, s, xv, 0.0, &mut ForwardCtx::inference())?;
            let r = probe(&mut g, y, draw)?;
            Ok((g, r))
        });
    }
}

#[test]
fn transformer_blocks() {
    for draw in 0..DRAWS {
        for index in [0, 1] {
            let cfg = FttConfig {
                d_emb: 8,
                blocks: 2,
                heads: 2,
                ..FttConfig::default()
            };
            let mut rng = rng_from_seed(draw);
            let mut s = ParamStore::new();
            let x = input(&mut s, &[2, 4, 8], draw + 60);
            let block = TransformerBlock::new(&mut s, index, &cfg, &mut rng).unwrap();
            perturb(&mut s, 0.3, draw).unwrap();
            assert_block("transformer block", &s, |s| {
                let mut g = Graph::new();
                let xv = g.param(s, x)?;
                let y = block.forward(&mut g, s, xv, &cfg, &mut ForwardCtx::inference())?;
                let r = probe(&mut g, y, draw)?;
                Ok((g, r))
            });
        }
    }
}

#[test]
fn poisson_deviance_loss() {
    for draw in 0..DRAWS {
        let mut s = ParamStore::new();
        let lm = input(&mut s, &[7, 1], draw);
        let y = vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 3.0];
        assert_block("deviance", &s, |s| {
            let mut g = Graph::new();
            let v = g.param(s, lm)?;
            let r = g.poisson_deviance(v, y.clone())?;
            Ok((g, r))
        });
    }
}

#[test]
fn every_neural_model_kind() {
    let data = small_data(400, 3);
    let rows = data.subset(&(0..16).collect::<Vec<_>>());
    for kind in NEURAL {
        for draw in 0..DRAWS {
            let mut m = build_model(kind, &tiny_spec(), &data, None, draw).unwrap();
            let n = m.neural_mut().unwrap();
            perturb(&mut n.store, 0.2, 1000 + draw).unwrap();
            let x = n.prepare(&rows).unwrap();
            let n = m.neural().unwrap();
            assert_block(kind.name(), &n.store, |s| n.loss(s, &x, &mut ForwardCtx::inference()));
        }
    }
}

#[test]
fn perturbed_caftt_has_no_dead_tensors() {
    let data = small_data(400, 3);
    let mut m = build_model(claimfreq::models::ModelKind::Caftt, &tiny_spec(), &data, None, 0).unwrap();
    perturb(&mut m.neural_mut().unwrap().store, 0.2, 1).unwrap();
    let n = m.neural().unwrap();
    let x = n.prepare(&data.subset(&[0, 1, 2, 3])).unwrap();
    let checks = check_gradients(&n.store, H, |s| n.loss(s, &x, &mut ForwardCtx::inference())).unwrap();
    let dead: Vec<&str> = checks
        .iter()
        .filter(|c| c.analytic_norm < 1e-8)
        .map(|c| c.name.as_str())
        .collect();
    // softmax over keys is invariant to the key bias
    assert_eq!(dead, ["block1.attention.bk"], "{checks:?}");
}
