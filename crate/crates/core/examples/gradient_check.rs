//! Autodiff against central finite differences for every neural model kind
//! at a tiny width.
//!
//! cargo run --release --example gradient_check

use claimfreq::data::SynthSpec;
use claimfreq::models::{build_model, FnnSpec, FttConfig, ModelKind, ModelSpec};
use claimfreq::tensor::gradcheck::{check_gradients, worst};
use claimfreq::tensor::ForwardCtx;

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::small(40).generate(2)?.dataset;
    let spec = ModelSpec {
        fnn: FnnSpec {
            hidden: vec![5, 4],
            ..FnnSpec::default()
        },
        ftt: FttConfig {
            d_emb: 8,
            blocks: 1,
            heads: 2,
            ..FttConfig::default()
        },
        ..ModelSpec::default()
    };
    for kind in ModelKind::ALL.into_iter().filter(|k| k.is_neural()) {
        let model = build_model(kind, &spec, &data, None, 5)?;
        let n = model.neural().expect("neural kind");
        let x = n.prepare(&data)?;
        let checks = check_gradients(&n.store, 1e-5, |s| n.loss(s, &x, &mut ForwardCtx::inference()))?;
        let scalars: usize = n.store.entries().iter().filter(|e| e.trainable).map(|e| e.value.len()).sum();
        println!(
            "{:<14} {:>3} tensors {:>5} scalars  worst relative error {:.2e}",
            kind.display_name(),
            checks.len(),
            scalars,
            worst(&checks)
        );
    }
    Ok(())
}
