//! Several seeds of the embedding FNN: rebalancing each fit, then averaging
//! them into an ensemble.
//!
//! cargo run --release --example rebalance_ensemble

use claimfreq::data::{split, SplitPolicy, SynthSpec};
use claimfreq::models::{build_model, ModelKind, ModelSpec, TrainedModel};
use claimfreq::training::{
    ensemble_predict, evaluate, metrics_from_predictions, rebalance, train, AverageDefinition, MetricsReport,
    TrainConfig,
};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(30_000).generate(5)?.dataset;
    let s = split(
        data.n_rows(),
        &SplitPolicy::Random {
            test_fraction: 0.1,
            seed: 0,
        },
    )?;
    let (train_set, test) = (data.subset(&s.train), data.subset(&s.test));
    let def = AverageDefinition::ExposureWeighted;
    let kind = ModelKind::FnnEmb;
    let mut raw = MetricsReport::default();
    let mut balanced = MetricsReport::default();
    let mut members: Vec<TrainedModel> = Vec::new();
    for seed in 1..=5 {
        let mut m = build_model(kind, &ModelSpec::default(), &train_set, None, seed)?;
        let mut cfg = TrainConfig::for_kind(kind, seed);
        cfg.max_epochs = 40;
        cfg.patience = 5;
        train(&mut m, &train_set, &cfg)?;
        raw.push(evaluate(&m, &format!("seed{seed}"), &train_set, &test, def)?);
        let factor = rebalance(&mut m, &train_set)?;
        balanced.push(evaluate(&m, &format!("seed{seed}"), &train_set, &test, def)?);
        println!("seed {seed}: rebalance factor {factor:.5}");
        members.push(m);
    }
    let refs: Vec<&TrainedModel> = members.iter().collect();
    let ens = metrics_from_predictions(
        kind.display_name(),
        "ensemble",
        (&train_set, &ensemble_predict(&refs, &train_set)?),
        (&test, &ensemble_predict(&refs, &test)?),
        def,
    )?;
    for (name, report) in [("raw", &raw), ("rebalanced", &balanced)] {
        let a = &report.aggregate()[0];
        println!(
            "{name:<11} test {:.4}% (±{:.4})  avg {:.3}% (±{:.3})",
            a.test_deviance.mean, a.test_deviance.std, a.avg_frequency.mean, a.avg_frequency.std
        );
    }
    let worst = balanced.rows.iter().map(|r| r.test_deviance).fold(f64::MIN, f64::max);
    println!(
        "ensemble    test {:.4}%  avg {:.3}%  (worst member {worst:.4}%)",
        ens.test_deviance, ens.avg_frequency
    );
    Ok(())
}
