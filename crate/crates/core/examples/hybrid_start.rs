//! Before training, CANN, CAFTT, LocalGLMnet and LocalGLMftt predict
//! exactly what the GLM they are built around predicts.
//!
//! cargo run --release --example hybrid_start

use claimfreq::data::SynthSpec;
use claimfreq::models::{anchor_glm_predict, build_model, ModelKind, ModelSpec};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(10_000).generate(4)?.dataset;
    for kind in [ModelKind::Cann, ModelKind::Caftt, ModelKind::LocalGlmNet, ModelKind::LocalGlmFtt] {
        let m = build_model(kind, &ModelSpec::default(), &data, None, 9)?;
        let net = m.predict(&data)?;
        let glm = anchor_glm_predict(&m, &data)?;
        let worst = net
            .iter()
            .zip(&glm)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        println!("{:<14} max relative deviation from its GLM: {worst:.2e}", kind.display_name());
    }
    Ok(())
}
