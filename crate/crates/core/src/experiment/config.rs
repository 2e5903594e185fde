use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CleaningRules, FeatureSchema, SplitPolicy, SynthSpec};
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};
use crate::training::{AverageDefinition, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Headered CSV; relative paths resolve against the config file.
    Csv {
        path: PathBuf,
        #[serde(default = "FeatureSchema::mtpl")]
        schema: FeatureSchema,
    },
    /// Generated portfolio, MTPL-shaped unless `spec` is given.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<SynthSpec>,
        #[serde(default = "default_rows")]
        rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_rows() -> usize {
    20_000
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: None,
            rows: default_rows(),
            seed: 0,
        }
    }
}

impl DataSource {
    pub fn schema(&self) -> FeatureSchema {
        match self {
            DataSource::Csv { schema, .. } => schema.clone(),
            DataSource::Synthetic { spec, rows, .. } => spec.clone().unwrap_or_else(|| SynthSpec::mtpl(*rows)).schema(),
        }
    }
}

/// Per-model (or global) changes to the default training setup.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.learning_rate {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.optimizer.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.validation_fraction {
            cfg.validation_fraction = v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub kind: ModelKind,
    /// Replaces the experiment-wide spec for this kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    #[serde(default)]
    pub train: TrainOverrides,
}

/// A roster item is either a bare kind name or an entry with overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RosterItem {
    Kind(ModelKind),
    Entry(RosterEntry),
}

impl RosterItem {
    pub fn entry(&self) -> RosterEntry {
        match self {
            RosterItem::Kind(kind) => RosterEntry {
                kind: *kind,
                spec: None,
                train: TrainOverrides::default(),
            },
            RosterItem::Entry(e) => e.clone(),
        }
    }
}

fn default_roster() -> Vec<RosterItem> {
    ModelKind::ALL.iter().map(|&k| RosterItem::Kind(k)).collect()
}

fn default_seeds() -> Vec<u64> {
    (1..=15).collect()
}

fn default_split() -> SplitPolicy {
    SplitPolicy::Random {
        test_fraction: 0.1,
        seed: 0,
    }
}

fn default_ensemble_size() -> usize {
    5
}

fn default_output() -> PathBuf {
    PathBuf::from("claimfreq-out")
}

/// One experiment: data, cleaning, split, models and seeds. Every field
/// has a default, so `{}` is a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSource,
    /// Defaults to exposure capped at 1 and claim counts at 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleaning: Option<CleaningRules>,
    #[serde(default = "default_split")]
    pub split: SplitPolicy,
    #[serde(default = "default_roster")]
    pub roster: Vec<RosterItem>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub spec: ModelSpec,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub average: AverageDefinition,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::Config("empty model roster".into()));
        }
        let mut kinds = BTreeSet::new();
        for item in &self.roster {
            let kind = item.entry().kind;
            if !kinds.insert(kind.name()) {
                return Err(Error::Config(format!("model kind `{kind}` listed twice")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cleaning_rules(&self) -> CleaningRules {
        self.cleaning.clone().unwrap_or_else(|| {
            let schema = self.data.schema();
            CleaningRules::mtpl_default(&schema.response, &schema.exposure)
        })
    }

    pub fn entries(&self) -> Vec<RosterEntry> {
        self.roster.iter().map(RosterItem::entry).collect()
    }

    pub fn entry(&self, kind: ModelKind) -> Result<RosterEntry> {
        self.entries()
            .into_iter()
            .find(|e| e.kind == kind)
            .ok_or_else(|| Error::Config(format!("model kind `{kind}` is not in the roster")))
    }

    pub fn spec_for(&self, entry: &RosterEntry) -> ModelSpec {
        entry.spec.clone().unwrap_or_else(|| self.spec.clone())
    }

    /// Kind defaults, then the global overrides, then the entry's.
    pub fn train_config(&self, entry: &RosterEntry, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_kind(entry.kind, seed);
        self.train.apply(&mut cfg);
        entry.train.apply(&mut cfg);
        cfg
    }

    /// Seed-independent GLM kinds run once, under the first seed.
    pub fn seeds_for(&self, kind: ModelKind) -> Vec<u64> {
        if kind.is_glm() {
            vec![self.seeds[0]]
        } else {
            self.seeds.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c.seeds.len(), 15);
        assert_eq!(c.entries().len(), ModelKind::ALL.len());
        assert_eq!(c.ensemble_size, 5);
        let t = c.train_config(&c.entry(ModelKind::Caftt).unwrap(), 3);
        assert_eq!((t.batch_size, t.max_epochs, t.patience, t.seed), (1024, 500, 15, 3));
    }

    #[test]
    fn roster_accepts_names_and_entries() {
        let c = ExperimentConfig::from_json(
            r#"{"roster": ["glm1", {"kind": "ftt", "train": {"max_epochs": 3}}], "train": {"patience": 2}}"#,
        )
        .unwrap();
        let ftt = c.entry(ModelKind::Ftt).unwrap();
        let t = c.train_config(&ftt, 1);
        assert_eq!((t.max_epochs, t.patience), (3, 2));
        assert!(c.entry(ModelKind::Cann).is_err());
    }

    #[test]
    fn duplicate_seeds_and_kinds_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeds": [1, 1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"roster": ["cann", "cann"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"roster": ["nope"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sedes": [1]}"#).is_err());
    }
}
