//! The whole experiment from one config: prepare, fit over seeds, evaluate,
//! ensemble, attribute and report, on a small synthetic portfolio.
//!
//! cargo run --release --example pipeline [-- OUT_DIR]

use claimfreq::experiment::{AttributeRequest, Experiment, ExperimentConfig, Selection};
use claimfreq::models::ModelKind;

const CONFIG: &str = r#"{
  "data": { "source": "synthetic", "rows": 6000, "seed": 3 },
  "seeds": [1, 2],
  "ensemble_size": 2,
  "train": { "max_epochs": 4, "patience": 2 },
  "roster": ["mean", "glm3", "fnn_emb", "cann", "localglmnet",
             { "kind": "caftt", "train": { "max_epochs": 2 } },
             { "kind": "localglmftt", "train": { "max_epochs": 2 } }]
}"#;

fn main() -> claimfreq::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("claimfreq-pipeline"));
    let exp = Experiment::new(ExperimentConfig::from_json(CONFIG)?, ".")?.with_out(&out);
    let summary = exp.prepare()?;
    println!(
        "{} rows, {} train / {} test, portfolio frequency {:.3}%",
        summary.rows, summary.train_rows, summary.test_rows, summary.portfolio_frequency
    );
    let all = Selection::default();
    for r in exp.fit(&all)? {
        println!("fitted {:<12} {:<6} {:>6} params", r.kind, r.run, r.parameters);
    }
    exp.evaluate(&all)?;
    exp.ensemble(&all)?;
    let a = exp.attribute(&AttributeRequest {
        kind: ModelKind::LocalGlmFtt,
        seed: Some(1),
        model_file: None,
        rows: Some((0..50).collect()),
    })?;
    println!("attributions: {} ({} rows)", a.path.display(), a.rows);
    let report = exp.report()?;
    println!("{}", std::fs::read_to_string(&report)?);
    Ok(())
}
