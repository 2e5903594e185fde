//! Intercept-only and the three GLM designs on a synthetic portfolio:
//! deviances, the balance property and the largest coefficients of GLM3.
//!
//! cargo run --release --example glm_baselines

use claimfreq::data::{split, SplitPolicy, SynthSpec};
use claimfreq::models::{build_model, ModelBody, ModelKind, ModelSpec};
use claimfreq::training::{evaluate, AverageDefinition};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(60_000).generate(11)?.dataset;
    let s = split(
        data.n_rows(),
        &SplitPolicy::Random {
            test_fraction: 0.1,
            seed: 0,
        },
    )?;
    let (train, test) = (data.subset(&s.train), data.subset(&s.test));
    println!("train frequency {:.3}%", 100.0 * train.frequency());

    for kind in [ModelKind::Mean, ModelKind::Glm1, ModelKind::Glm2, ModelKind::Glm3] {
        let m = build_model(kind, &ModelSpec::default(), &train, None, 0)?;
        let row = evaluate(&m, "glm", &train, &test, AverageDefinition::ExposureWeighted)?;
        let balance = m.predict(&train)?.iter().sum::<f64>() / train.total_claims();
        println!(
            "{:<6} params {:>3}  train {:.4}%  test {:.4}%  avg {:.3}%  sum(yhat)/sum(y) - 1 = {:+.1e}",
            kind.display_name(),
            row.parameters,
            row.train_deviance,
            row.test_deviance,
            row.avg_frequency,
            balance - 1.0
        );
        if kind == ModelKind::Glm3 {
            if let ModelBody::Glm(g) = &m.body {
                let mut coefs: Vec<_> = g.params.coefficients.iter().collect();
                coefs.sort_by(|a, b| b.beta.abs().total_cmp(&a.beta.abs()));
                for c in coefs.iter().take(5) {
                    println!("    {:<28} {:+.4}", c.column.label, c.beta);
                }
            }
        }
    }
    Ok(())
}
