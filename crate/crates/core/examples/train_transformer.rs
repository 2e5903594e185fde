//! A few epochs of FTT and CAFTT on a small synthetic portfolio, printing
//! the early-stopping history.
//!
//! cargo run --release --example train_transformer

use claimfreq::data::{split, SplitPolicy, SynthSpec};
use claimfreq::models::{build_model, ModelKind, ModelSpec};
use claimfreq::training::{evaluate, rebalance, train, AverageDefinition, TrainConfig};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(8_000).generate(21)?.dataset;
    let s = split(
        data.n_rows(),
        &SplitPolicy::Random {
            test_fraction: 0.2,
            seed: 0,
        },
    )?;
    let (train_set, test) = (data.subset(&s.train), data.subset(&s.test));
    for kind in [ModelKind::Ftt, ModelKind::Caftt] {
        let mut m = build_model(kind, &ModelSpec::default(), &train_set, None, 1)?;
        let mut cfg = TrainConfig::for_kind(kind, 1);
        cfg.max_epochs = 6;
        cfg.patience = 3;
        cfg.optimizer.learning_rate = 1e-3;
        let h = train(&mut m, &train_set, &cfg)?;
        println!("{} ({} parameters)", kind.display_name(), m.count_parameters());
        println!("  epoch 0   validation {:.4}%", h.initial_validation);
        for (e, (t, v)) in h.train_deviance.iter().zip(&h.validation_deviance).enumerate() {
            println!("  epoch {:<3} train {t:.4}%  validation {v:.4}%", e + 1);
        }
        println!("  best epoch {}, stopped by {:?}, {:.1}s", h.best_epoch, h.stop_reason, h.seconds);
        let factor = rebalance(&mut m, &train_set)?;
        let row = evaluate(&m, "seed1", &train_set, &test, AverageDefinition::ExposureWeighted)?;
        println!(
            "  rebalance {factor:.5}; test deviance {:.4}%, avg frequency {:.3}%",
            row.test_deviance, row.avg_frequency
        );
    }
    Ok(())
}
