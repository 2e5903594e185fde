use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, RosterEntry};
use super::manifest::{sha256_hex, RunManifest};
use crate::data::{
    clean, read_index_file, split, write_index_file, Dataset, FeatureSchema, NeuralPreprocessor, SplitIndices,
    SplitPolicy, SynthSpec,
};
use crate::error::{Error, Result};
use crate::models::io::{load_model, load_model_for, save_model};
use crate::models::{build_model, ModelKind, TrainedModel};
use crate::training::report::{aggregate_csv, fitting_table, loss_table, rows_csv};
use crate::training::{
    ensemble_predict, evaluate, local_glm_attributions, metrics_from_predictions, rebalance, train, MetricsReport,
    StopReason,
};

/// Largest tolerated `|ln(yhat / v) - reconstruction|` in exported
/// attributions.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;

/// Which fits a command touches. Empty `kinds` means the whole roster;
/// `seeds` replaces the configured seed list for the neural kinds.
#[derive(Clone, Debug, Default)]
pub struct Selection {
    pub kinds: Vec<ModelKind>,
    pub seeds: Option<Vec<u64>>,
}

/// One (model, seed) pair. GLM kinds have a single run labelled `glm`.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub entry: RosterEntry,
    pub seed: u64,
    pub label: String,
}

impl Run {
    pub fn timing_key(&self) -> String {
        format!("fit/{}/{}", self.entry.kind, self.label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub raw_rows: usize,
    pub rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub capped_cells: usize,
    /// Claims per unit exposure, in percent.
    pub portfolio_frequency: f64,
    pub train_frequency: f64,
    pub test_frequency: f64,
    pub split_policy: String,
}

/// Deterministic facts about one fit, stored next to the model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub kind: ModelKind,
    pub run: String,
    pub seed: u64,
    pub parameters: usize,
    pub rebalance: f64,
    pub epochs: Option<usize>,
    pub best_epoch: Option<usize>,
    pub stop_reason: Option<StopReason>,
    pub best_validation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub raw: MetricsReport,
    pub rebalanced: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeRequest {
    pub kind: ModelKind,
    /// Run seed; the first configured seed when absent.
    pub seed: Option<u64>,
    /// Explicit model file instead of the experiment's own.
    pub model_file: Option<PathBuf>,
    /// Positions within the test set; every test row when absent.
    pub rows: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub max_reconstruction_error: f64,
}

/// Cleaned data with its split, as written by `prepare`.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    pub split: SplitIndices,
}

impl Prepared {
    pub fn train(&self) -> Dataset {
        self.data.subset(&self.split.train)
    }

    pub fn test(&self) -> Dataset {
        self.data.subset(&self.split.test)
    }
}

/// `prepare`, `fit`, `evaluate`, `ensemble`, `attribute` and `report`
/// over one config and output directory.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Directory relative config paths resolve against.
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub jobs: usize,
}

const CLEAN_CSV: &str = "data/clean.csv";
const SCHEMA_JSON: &str = "data/schema.json";
const TRAIN_IDX: &str = "data/train.idx";
const TEST_IDX: &str = "data/test.idx";
const ENCODERS_JSON: &str = "data/encoders.json";
const SUMMARY_JSON: &str = "data/summary.json";
const SINGLE_JSON: &str = "metrics/single.json";
const ENSEMBLE_JSON: &str = "metrics/ensemble.json";
const REPORT_MD: &str = "report.md";

fn write_text(out: &Path, rel: &str, text: &str) -> Result<()> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    std::fs::write(&path, text).map_err(|e| Error::file(&path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn json_text<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn missing(path: &Path, hint: &str) -> Error {
    Error::file(path, std::io::Error::new(std::io::ErrorKind::NotFound, hint.to_string()))
}

/// Runs `f(0..n)` on up to `jobs` threads; results come back in index order.
fn run_parallel<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Vec<Result<T>> {
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let workers = jobs.clamp(1, n.max(1));
    let done: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= n {
                            break;
                        }
                        mine.push((i, f(i)));
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit worker panicked")).collect()
    });
    for (i, r) in done.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Sorted seeds cut into consecutive groups of `size`; a short tail is
/// dropped unless it is the only group.
pub fn ensemble_groups(seeds: &[u64], size: usize) -> Vec<Vec<u64>> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    let full: Vec<Vec<u64>> = sorted.chunks_exact(size.max(1)).map(<[u64]>::to_vec).collect();
    if full.is_empty() && !sorted.is_empty() {
        vec![sorted]
    } else {
        full
    }
}

/// Comma separated row positions and inclusive ranges, e.g. `0-9,42`.
pub fn parse_rows(s: &str) -> Result<Vec<usize>> {
    let bad = |part: &str| Error::Config(format!("bad row selector `{part}`"));
    let mut rows = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad(part))?;
                let b: usize = b.trim().parse().map_err(|_| bad(part))?;
                if b < a {
                    return Err(bad(part));
                }
                rows.extend(a..=b);
            }
            None => rows.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("empty row selection".into()));
    }
    Ok(rows)
}

impl Experiment {
    pub fn new(config: ExperimentConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let base_dir = base_dir.into();
        let config_hash = sha256_hex(&serde_json::to_vec(&config)?);
        let out = base_dir.join(&config.output);
        Ok(Experiment {
            config,
            config_hash,
            base_dir,
            out,
            jobs: 1,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config = ExperimentConfig::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, base)
    }

    pub fn with_out(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = out.into();
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn manifest(&self) -> Result<RunManifest> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::file(&self.out, e))?;
        RunManifest::open(&self.out, &self.config_hash)
    }

    pub fn model_rel(kind: ModelKind, run: &str) -> String {
        format!("models/{kind}/{run}.model.json")
    }

    pub fn model_path(&self, kind: ModelKind, run: &str) -> PathBuf {
        self.out.join(Self::model_rel(kind, run))
    }

    fn run_label(kind: ModelKind, seed: u64) -> String {
        if kind.is_glm() {
            "glm".into()
        } else {
            format!("seed{seed}")
        }
    }

    /// Runs a selection expands to, in roster then seed order.
    pub fn runs(&self, sel: &Selection) -> Result<Vec<Run>> {
        let entries = if sel.kinds.is_empty() {
            self.config.entries()
        } else {
            sel.kinds.iter().map(|&k| self.config.entry(k)).collect::<Result<_>>()?
        };
        let mut runs = Vec::new();
        for entry in entries {
            let seeds = match (&sel.seeds, entry.kind.is_glm()) {
                (Some(s), false) => s.clone(),
                _ => self.config.seeds_for(entry.kind),
            };
            for seed in seeds {
                runs.push(Run {
                    label: Self::run_label(entry.kind, seed),
                    entry: entry.clone(),
                    seed,
                });
            }
        }
        Ok(runs)
    }

    fn load_source(&self) -> Result<Dataset> {
        match &self.config.data {
            DataSource::Csv { path, schema } => Dataset::load_csv(self.resolve(path), schema),
            DataSource::Synthetic { spec, rows, seed } => {
                let spec = spec.clone().unwrap_or_else(|| SynthSpec::mtpl(*rows));
                Ok(spec.generate(*seed)?.dataset)
            }
        }
    }

    /// Reads or generates the source, cleans it, splits it and writes the
    /// data artifacts.
    pub fn prepare(&self) -> Result<PrepareSummary> {
        let started = Instant::now();
        let raw = self.load_source()?;
        let (data, report) = clean(&raw, &self.config.cleaning_rules())?;
        let policy = match &self.config.split {
            SplitPolicy::IndexFile { path } => {
                if report.rows_after != report.rows_before {
                    return Err(Error::Config(
                        "cleaning dropped rows, so index-file row numbers no longer line up".into(),
                    ));
                }
                SplitPolicy::IndexFile {
                    path: self.resolve(path),
                }
            }
            p => p.clone(),
        };
        let split = split(data.n_rows(), &policy)?;
        let train = data.subset(&split.train);
        let test = data.subset(&split.test);
        let summary = PrepareSummary {
            raw_rows: raw.n_rows(),
            rows: data.n_rows(),
            train_rows: train.n_rows(),
            test_rows: test.n_rows(),
            capped_cells: report.capped_cells,
            portfolio_frequency: 100.0 * data.frequency(),
            train_frequency: 100.0 * train.frequency(),
            test_frequency: 100.0 * test.frequency(),
            split_policy: split.policy.clone(),
        };

        let mut manifest = self.manifest()?;
        std::fs::create_dir_all(self.out.join("data")).map_err(|e| Error::file(self.out.join("data"), e))?;
        data.write_csv(self.out.join(CLEAN_CSV))?;
        write_text(&self.out, SCHEMA_JSON, &json_text(&data.schema)?)?;
        write_index_file(self.out.join(TRAIN_IDX), "train", &split.train)?;
        write_index_file(self.out.join(TEST_IDX), "test", &split.test)?;
        let spec = &self.config.spec;
        let encoders = NeuralPreprocessor::fit(&spec.features_for(&data.schema), &train)?;
        write_text(&self.out, ENCODERS_JSON, &json_text(&encoders)?)?;
        write_text(&self.out, SUMMARY_JSON, &json_text(&summary)?)?;
        for rel in [CLEAN_CSV, SCHEMA_JSON, TRAIN_IDX, TEST_IDX, ENCODERS_JSON, SUMMARY_JSON] {
            manifest.record(&self.out, rel, "prepare")?;
        }
        manifest.timings.insert("prepare".into(), started.elapsed().as_secs_f64());
        manifest.save(&self.out)?;
        Ok(summary)
    }

    /// The artifacts `prepare` wrote.
    pub fn load_prepared(&self) -> Result<Prepared> {
        let hint = "run `prepare` first";
        let schema_path = self.out.join(SCHEMA_JSON);
        if !schema_path.exists() {
            return Err(missing(&schema_path, hint));
        }
        let schema: FeatureSchema = read_json(&schema_path)?;
        let data = Dataset::load_csv(self.out.join(CLEAN_CSV), &schema)?;
        if data.schema.hash() != schema.hash() {
            return Err(Error::SchemaMismatch {
                expected: schema.hash(),
                found: data.schema.hash(),
            });
        }
        let (_, train) = read_index_file(self.out.join(TRAIN_IDX))?;
        let (_, test) = read_index_file(self.out.join(TEST_IDX))?;
        let split = SplitIndices {
            train,
            validation: vec![],
            test,
            seed: None,
            policy: "prepared".into(),
        };
        if !split.is_partition_of(data.n_rows()) {
            return Err(Error::Config("prepared split files do not partition the data".into()));
        }
        Ok(Prepared { data, split })
    }

    fn fit_one(&self, train_set: &Dataset, run: &Run) -> Result<(FitRecord, f64)> {
        let started = Instant::now();
        let kind = run.entry.kind;
        let spec = self.config.spec_for(&run.entry);
        let mut model = build_model(kind, &spec, train_set, None, run.seed)?;
        let history = if kind.is_neural() {
            let cfg = self.config.train_config(&run.entry, run.seed);
            Some(train(&mut model, train_set, &cfg)?)
        } else {
            None
        };
        let factor = rebalance(&mut model, train_set)?;
        let seconds = started.elapsed().as_secs_f64();
        let record = FitRecord {
            kind,
            run: run.label.clone(),
            seed: run.seed,
            parameters: model.count_parameters(),
            rebalance: factor,
            epochs: history.as_ref().map(|h| h.epochs_run()),
            best_epoch: history.as_ref().map(|h| h.best_epoch),
            stop_reason: history.as_ref().map(|h| h.stop_reason),
            best_validation: history.as_ref().map(|h| h.best_validation()),
        };
        let dir = self.out.join(format!("models/{kind}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        save_model(&model, self.model_path(kind, &run.label))?;
        if let Some(h) = &history {
            write_text(&self.out, &format!("models/{kind}/{}.history.csv", run.label), &h.to_csv())?;
        }
        write_text(&self.out, &format!("models/{kind}/{}.fit.json", run.label), &json_text(&record)?)?;
        log::info!("fitted {kind} {} in {seconds:.1}s", run.label);
        Ok((record, seconds))
    }

    /// Fits every selected run on the training rows, `jobs` at a time.
    pub fn fit(&self, sel: &Selection) -> Result<Vec<FitRecord>> {
        let prepared = self.load_prepared()?;
        let train_set = prepared.train();
        let runs = self.runs(sel)?;
        let results = run_parallel(self.jobs, runs.len(), |i| self.fit_one(&train_set, &runs[i]));
        let mut manifest = self.manifest()?;
        let mut records = Vec::new();
        let mut first_err = None;
        for (run, res) in runs.iter().zip(results) {
            match res {
                Ok((record, seconds)) => {
                    let kind = run.entry.kind;
                    let mut rels = vec![Self::model_rel(kind, &run.label)];
                    if kind.is_neural() {
                        rels.push(format!("models/{kind}/{}.history.csv", run.label));
                    }
                    rels.push(format!("models/{kind}/{}.fit.json", run.label));
                    for rel in rels {
                        manifest.record(&self.out, &rel, "fit")?;
                    }
                    manifest.timings.insert(run.timing_key(), seconds);
                    records.push(record);
                }
                Err(e) => {
                    log::error!("fit {} {} failed: {e}", run.entry.kind, run.label);
                    first_err.get_or_insert(e);
                }
            }
        }
        manifest.save(&self.out)?;
        match first_err {
            Some(e) => Err(e),
            None => Ok(records),
        }
    }

    fn load_run(&self, run: &Run, schema: &FeatureSchema) -> Result<TrainedModel> {
        let path = self.model_path(run.entry.kind, &run.label);
        if !path.exists() {
            return Err(missing(&path, "model file missing; run `fit` first"));
        }
        load_model_for(&path, run.entry.kind, schema)
    }

    fn fit_record(&self, run: &Run) -> Option<FitRecord> {
        read_json(&self.out.join(format!("models/{}/{}.fit.json", run.entry.kind, run.label))).ok()
    }

    /// Raw and rebalanced metrics for every selected run.
    pub fn evaluate(&self, sel: &Selection) -> Result<Evaluation> {
        let prepared = self.load_prepared()?;
        let (train_set, test_set) = (prepared.train(), prepared.test());
        let manifest = self.manifest()?;
        let mut eval = Evaluation::default();
        for run in self.runs(sel)? {
            let model = self.load_run(&run, &prepared.data.schema)?;
            let record = self.fit_record(&run);
            let seconds = manifest.timing(&run.timing_key()).unwrap_or(0.0);
            let mut raw_model = model.clone();
            raw_model.rebalance = 1.0;
            for (report, m) in [(&mut eval.raw, &raw_model), (&mut eval.rebalanced, &model)] {
                let mut row = evaluate(m, &run.label, &train_set, &test_set, self.config.average)?;
                row.epochs = record.as_ref().and_then(|r| r.epochs);
                row.seconds = seconds;
                report.push(row);
            }
        }
        let mut manifest = manifest;
        let files = [
            ("metrics/single_raw.csv", rows_csv(&eval.raw)),
            ("metrics/single_rebalanced.csv", rows_csv(&eval.rebalanced)),
            ("metrics/aggregate_raw.csv", aggregate_csv(&eval.raw.aggregate())),
            ("metrics/aggregate_rebalanced.csv", aggregate_csv(&eval.rebalanced.aggregate())),
            (SINGLE_JSON, json_text(&eval)?),
        ];
        for (rel, text) in files {
            write_text(&self.out, rel, &text)?;
            manifest.record(&self.out, rel, "evaluate")?;
        }
        manifest.save(&self.out)?;
        Ok(eval)
    }

    /// Averages rebalanced members over disjoint seed groups of
    /// `ensemble_size`, one row per ensemble. GLM kinds are skipped.
    pub fn ensemble(&self, sel: &Selection) -> Result<MetricsReport> {
        let prepared = self.load_prepared()?;
        let (train_set, test_set) = (prepared.train(), prepared.test());
        let mut manifest = self.manifest()?;
        let mut report = MetricsReport::default();
        let runs = self.runs(sel)?;
        let mut kinds: Vec<ModelKind> = Vec::new();
        for r in &runs {
            if r.entry.kind.is_neural() && !kinds.contains(&r.entry.kind) {
                kinds.push(r.entry.kind);
            }
        }
        for kind in kinds {
            let kind_runs: Vec<&Run> = runs.iter().filter(|r| r.entry.kind == kind).collect();
            let seeds: Vec<u64> = kind_runs.iter().map(|r| r.seed).collect();
            for (g, group) in ensemble_groups(&seeds, self.config.ensemble_size).iter().enumerate() {
                let members_runs: Vec<&Run> = group
                    .iter()
                    .map(|s| *kind_runs.iter().find(|r| r.seed == *s).expect("seed from this kind"))
                    .collect();
                let members = members_runs
                    .iter()
                    .map(|r| self.load_run(r, &prepared.data.schema))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&TrainedModel> = members.iter().collect();
                let label = format!(
                    "ens{}:{}",
                    g + 1,
                    group.iter().map(u64::to_string).collect::<Vec<_>>().join("-")
                );
                let p_train = ensemble_predict(&refs, &train_set)?;
                let p_test = ensemble_predict(&refs, &test_set)?;
                let mut row = metrics_from_predictions(
                    kind.display_name(),
                    &label,
                    (&train_set, &p_train),
                    (&test_set, &p_test),
                    self.config.average,
                )?;
                row.parameters = members[0].count_parameters();
                row.seconds = members_runs
                    .iter()
                    .map(|r| manifest.timing(&r.timing_key()).unwrap_or(0.0))
                    .sum();
                report.push(row);
            }
        }
        let files = [
            ("metrics/ensemble.csv", rows_csv(&report)),
            ("metrics/ensemble_aggregate.csv", aggregate_csv(&report.aggregate())),
            (ENSEMBLE_JSON, json_text(&report)?),
        ];
        for (rel, text) in files {
            write_text(&self.out, rel, &text)?;
            manifest.record(&self.out, rel, "ensemble")?;
        }
        manifest.save(&self.out)?;
        Ok(report)
    }

    /// Writes the per-row local GLM attributions of one LocalGLM-family
    /// model on test rows and checks that they rebuild its predictions.
    pub fn attribute(&self, req: &AttributeRequest) -> Result<AttributeSummary> {
        let prepared = self.load_prepared()?;
        let test_set = prepared.test();
        let seed = req.seed.unwrap_or(self.config.seeds_for(req.kind)[0]);
        let label = Self::run_label(req.kind, seed);
        let (model, rel) = match &req.model_file {
            Some(p) => {
                let m = load_model(self.resolve(p))?;
                m.check_schema(&prepared.data)?;
                let rel = format!("attributions/{}_{}.csv", m.kind, p.file_stem().and_then(|s| s.to_str()).unwrap_or("model"));
                (m, rel)
            }
            None => {
                let path = self.model_path(req.kind, &label);
                if !path.exists() {
                    return Err(missing(&path, "model file missing; run `fit` first"));
                }
                (load_model_for(&path, req.kind, &prepared.data.schema)?, format!("attributions/{}_{label}.csv", req.kind))
            }
        };
        let rows = match &req.rows {
            Some(r) => {
                if let Some(&bad) = r.iter().find(|&&i| i >= test_set.n_rows()) {
                    return Err(Error::Config(format!(
                        "row {bad} outside the {} test rows",
                        test_set.n_rows()
                    )));
                }
                r.clone()
            }
            None => (0..test_set.n_rows()).collect(),
        };
        let subset = test_set.subset(&rows);
        let attr = local_glm_attributions(&model, &subset)?;
        let err = attr.max_reconstruction_error(&model.predict(&subset)?, &subset.exposure);
        if !(err < RECONSTRUCTION_TOLERANCE) {
            return Err(Error::Tolerance(format!(
                "attributions rebuild the log rate only to {err:e}"
            )));
        }
        let path = self.out.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        let file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        attr.write_csv(std::io::BufWriter::new(file))?;
        let mut manifest = self.manifest()?;
        manifest.record(&self.out, &rel, "attribute")?;
        manifest.save(&self.out)?;
        Ok(AttributeSummary {
            path,
            rows: rows.len(),
            max_reconstruction_error: err,
        })
    }

    /// Markdown report from the evaluation (and ensemble) results.
    pub fn report(&self) -> Result<PathBuf> {
        let summary: PrepareSummary = {
            let p = self.out.join(SUMMARY_JSON);
            if !p.exists() {
                return Err(missing(&p, "run `prepare` first"));
            }
            read_json(&p)?
        };
        let single_path = self.out.join(SINGLE_JSON);
        if !single_path.exists() {
            return Err(missing(&single_path, "run `evaluate` first"));
        }
        let eval: Evaluation = read_json(&single_path)?;
        let ensembles: Option<MetricsReport> = {
            let p = self.out.join(ENSEMBLE_JSON);
            if p.exists() {
                Some(read_json(&p)?)
            } else {
                None
            }
        };
        let mut md = String::from("# Claim frequency experiment\n\n");
        md.push_str(&format!(
            "{} rows after cleaning ({} raw, {} capped cells); {} train and {} test rows.\n\
             Portfolio frequency {:.3}% (train {:.3}%, test {:.3}%).\n\n",
            summary.rows,
            summary.raw_rows,
            summary.capped_cells,
            summary.train_rows,
            summary.test_rows,
            summary.portfolio_frequency,
            summary.train_frequency,
            summary.test_frequency
        ));
        md.push_str("## Fitting\n\n");
        md.push_str(&fitting_table(&eval.rebalanced.aggregate()));
        md.push_str("\n## Single models\n\n");
        md.push_str(&loss_table(&eval.raw.aggregate()));
        md.push_str("\n## Single models, rebalanced\n\n");
        md.push_str(&loss_table(&eval.rebalanced.aggregate()));
        if let Some(e) = ensembles.filter(|e| !e.rows.is_empty()) {
            md.push_str(&format!("\n## Ensembles of {}\n\n", self.config.ensemble_size));
            md.push_str(&loss_table(&e.aggregate()));
        }
        write_text(&self.out, REPORT_MD, &md)?;
        let mut manifest = self.manifest()?;
        manifest.record(&self.out, REPORT_MD, "report")?;
        manifest.save(&self.out)?;
        Ok(self.out.join(REPORT_MD))
    }

    /// `prepare`, `fit`, `evaluate`, `ensemble` and `report` in sequence.
    pub fn run_all(&self, sel: &Selection) -> Result<PathBuf> {
        self.prepare()?;
        self.fit(sel)?;
        self.evaluate(sel)?;
        self.ensemble(sel)?;
        self.report()
    }
}
