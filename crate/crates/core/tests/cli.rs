use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "data": { "source": "synthetic", "rows": 3000, "seed": 5 },
  "seeds": [1, 2],
  "ensemble_size": 2,
  "spec": {
    "fnn": { "hidden": [6, 5, 4] },
    "ftt": { "d_emb": 8, "blocks": 1, "heads": 2 }
  },
  "train": { "max_epochs": 2, "patience": 2, "batch_size": 256 },
  "roster": ["mean", "glm1", "cann", "ftt", "localglmftt"],
  "output": "out"
}"#;

fn claimfreq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claimfreq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn workspace(config: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("experiment.json");
    std::fs::write(&path, config).unwrap();
    let p = path.to_str().unwrap().to_string();
    (dir, p)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_config_is_an_input_error_naming_the_file() {
    let o = claimfreq(&["--config", "/nonexistent/exp.json", "prepare"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/exp.json"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_and_bad_usage_exit_with_2() {
    let (_dir, cfg) = workspace(r#"{ "data": { "source": "synthetic" }, "epochs": 3 }"#);
    assert_eq!(claimfreq(&["--config", &cfg, "prepare"]).status.code(), Some(2));
    assert_eq!(claimfreq(&["fit", "--model", "gbm"]).status.code(), Some(2));
}

#[test]
fn full_pipeline_writes_a_consistent_output_tree() {
    let (dir, cfg) = workspace(CONFIG);
    let out = dir.path().join("out");

    let o = claimfreq(&["--config", &cfg, "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(report.contains("LocalGLMftt"), "{report}");

    let o = claimfreq(&["--config", &cfg, "--seed", "1", "attribute", "--model", "localglmftt", "--rows", "0-9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("attributions/localglmftt_seed1.csv")).unwrap();
    // long format: an intercept line plus one line per feature for each row
    assert_eq!(csv.lines().count(), 1 + 10 * 10);

    let o = claimfreq(&["--config", &cfg, "attribute", "--model", "ftt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model kind has no GLM skip"), "{}", stderr(&o));

    let model = out.join("models/ftt/seed1.model.json");
    let first = std::fs::read(&model).unwrap();
    let o = claimfreq(&["--config", &cfg, "--seed", "1", "fit", "--model", "ftt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&model).unwrap(), first);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<PathBuf> = manifest["artifacts"].as_object().unwrap().keys().map(PathBuf::from).collect();
    let mut on_disk = files_under(&out);
    on_disk.retain(|p| p != Path::new("manifest.json"));
    assert_eq!(listed, on_disk);
}

#[test]
fn diverging_training_exits_with_3() {
    let config = CONFIG
        .replace(r#""batch_size": 256"#, r#""batch_size": 256, "learning_rate": 1e6"#)
        .replace(r#"["mean", "glm1", "cann", "ftt", "localglmftt"]"#, r#"["fnn_emb"]"#);
    let (_dir, cfg) = workspace(&config);
    assert!(claimfreq(&["--config", &cfg, "prepare"]).status.success());
    let o = claimfreq(&["--config", &cfg, "--seed", "1", "fit", "--model", "fnn_emb"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
