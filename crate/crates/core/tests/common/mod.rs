#![allow(dead_code)]

use claimfreq::data::{split, Dataset, SplitPolicy, SynthSpec};
use claimfreq::models::{FnnSpec, FttConfig, ModelKind, ModelSpec};
use claimfreq::tensor::layers::uniform;
use claimfreq::tensor::ParamStore;
use claimfreq::training::TrainConfig;
use claimfreq::{rng_from_seed, Result};

pub const NEURAL: [ModelKind; 7] = [
    ModelKind::FnnOhe,
    ModelKind::FnnEmb,
    ModelKind::Cann,
    ModelKind::LocalGlmNet,
    ModelKind::Ftt,
    ModelKind::Caftt,
    ModelKind::LocalGlmFtt,
];

/// d_emb 8, one block, two heads; small FNN widths.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        fnn: FnnSpec {
            hidden: vec![6, 5, 4],
            ..FnnSpec::default()
        },
        ftt: FttConfig {
            d_emb: 8,
            blocks: 1,
            heads: 2,
            ..FttConfig::default()
        },
        ..ModelSpec::default()
    }
}

pub fn small_data(n: usize, seed: u64) -> Dataset {
    SynthSpec::small(n).generate(seed).unwrap().dataset
}

pub fn train_test(d: &Dataset, test_fraction: f64) -> (Dataset, Dataset) {
    let s = split(d.n_rows(), &SplitPolicy::Random { test_fraction, seed: 0 }).unwrap();
    (d.subset(&s.train), d.subset(&s.test))
}

/// Adds `U[-scale, scale]` noise to every trainable tensor.
pub fn perturb(store: &mut ParamStore, scale: f64, seed: u64) -> Result<()> {
    let mut rng = rng_from_seed(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.entry(id).trainable {
            continue;
        }
        let noise = uniform(&mut rng, store.get(id).shape(), scale);
        for (x, e) in store.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *x += e;
        }
    }
    Ok(())
}

pub fn quick_train(kind: ModelKind, seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::for_kind(kind, seed);
    cfg.max_epochs = epochs;
    cfg.batch_size = 128;
    cfg.optimizer.learning_rate = 3e-3;
    cfg
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}
