//! Trainable parameter count of every model kind on an MTPL-shaped
//! portfolio (7 numerical inputs, 11 brands, 22 regions).
//!
//! cargo run --release --example parameter_counts

use claimfreq::data::SynthSpec;
use claimfreq::models::{build_model, ModelKind, ModelSpec};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(5_000).generate(1)?.dataset;
    let spec = ModelSpec::default();
    println!("{:<14} {:>10}", "model", "#params");
    for kind in ModelKind::ALL {
        let model = build_model(kind, &spec, &data, None, 1)?;
        println!("{:<14} {:>10}", kind.display_name(), model.count_parameters());
    }
    Ok(())
}
