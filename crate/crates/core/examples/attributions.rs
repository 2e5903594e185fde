//! Per-row GLM coefficients and log-rate contributions from LocalGLMnet and
//! LocalGLMftt, with the check that they rebuild each prediction.
//!
//! cargo run --release --example attributions

use claimfreq::data::SynthSpec;
use claimfreq::models::{build_model, ModelKind, ModelSpec};
use claimfreq::training::{local_glm_attributions, train, TrainConfig};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(6_000).generate(8)?.dataset;
    let rows = data.subset(&[0, 1, 2]);
    for kind in [ModelKind::LocalGlmNet, ModelKind::LocalGlmFtt] {
        let mut m = build_model(kind, &ModelSpec::default(), &data, None, 3)?;
        let mut cfg = TrainConfig::for_kind(kind, 3);
        cfg.max_epochs = 3;
        cfg.optimizer.learning_rate *= 10.0;
        train(&mut m, &data, &cfg)?;
        let a = local_glm_attributions(&m, &rows)?;
        println!("{}", kind.display_name());
        for i in 0..a.rows() {
            println!("  row {}  intercept {:+.4}", a.row_ids[i], a.intercept[i]);
            for (j, f) in a.features.iter().enumerate() {
                println!(
                    "    {f:<12} beta {:+.4}  contribution {:+.4}",
                    a.beta_row(i)[j],
                    a.contribution_row(i)[j]
                );
            }
        }
        let err = a.max_reconstruction_error(&m.predict(&rows)?, &rows.exposure);
        println!("  max |intercept + sum(contribution) - ln(yhat/v)| = {err:.2e}");
    }
    match local_glm_attributions(&build_model(ModelKind::Ftt, &ModelSpec::default(), &data, None, 3)?, &rows) {
        Err(e) => println!("FTT: {e}"),
        Ok(_) => unreachable!("plain FTT has no GLM skip"),
    }
    Ok(())
}
