//! Writing a fitted model to its JSON file and reading it back; loading it
//! against data with another schema is refused.
//!
//! cargo run --release --example save_load

use claimfreq::data::SynthSpec;
use claimfreq::models::io::{load_model, load_model_for, save_model};
use claimfreq::models::{build_model, ModelKind, ModelSpec};

fn main() -> claimfreq::Result<()> {
    let data = SynthSpec::mtpl(3_000).generate(1)?.dataset;
    let model = build_model(ModelKind::Caftt, &ModelSpec::default(), &data, None, 2)?;
    let path = std::env::temp_dir().join("claimfreq-example-caftt.json");
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    let same = model.predict(&data)? == back.predict(&data)?;
    println!(
        "{} ({} bytes): predictions identical after reload: {same}",
        path.display(),
        std::fs::metadata(&path)?.len()
    );
    let other = SynthSpec::small(100).generate(1)?.dataset;
    if let Err(e) = load_model_for(&path, ModelKind::Caftt, &other.schema) {
        println!("loading for another schema: {e}");
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
