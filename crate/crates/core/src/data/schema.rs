use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Real-valued column. With `ordinal_levels`, string cells are parsed as
    /// the 1-based position of the level in that list.
    Numerical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ordinal_levels: Option<Vec<String>>,
    },
    /// Level dictionary in sorted order; ids are dense in `[0, S)`. An empty
    /// list in a config is filled from the observed levels on load.
    Categorical {
        #[serde(default)]
        levels: Vec<String>,
    },
    /// Two-valued column stored as 0/1; `levels[1]` maps to 1.
    Boolean { levels: [String; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl Feature {
    pub fn numerical(name: &str) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Numerical {
                ordinal_levels: None,
            },
        }
    }

    pub fn ordinal(name: &str, levels: &[&str]) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Numerical {
                ordinal_levels: Some(levels.iter().map(|s| s.to_string()).collect()),
            },
        }
    }

    pub fn categorical(name: &str, levels: Vec<String>) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Categorical { levels },
        }
    }

    pub fn boolean(name: &str, false_level: &str, true_level: &str) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Boolean {
                levels: [false_level.to_string(), true_level.to_string()],
            },
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { levels } => Some(levels),
            _ => None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }
}

/// Column layout of a frequency dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    pub response: String,
    pub exposure: String,
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    /// The public French MTPL frequency layout: two categorical covariates,
    /// six numerical (area code read as ordinal) and one boolean.
    pub fn mtpl() -> Self {
        FeatureSchema {
            id_column: Some("IDpol".into()),
            response: "ClaimNb".into(),
            exposure: "Exposure".into(),
            features: vec![
                Feature::ordinal("Area", &["A", "B", "C", "D", "E", "F"]),
                Feature::numerical("VehPower"),
                Feature::numerical("VehAge"),
                Feature::numerical("DrivAge"),
                Feature::numerical("BonusMalus"),
                Feature::categorical("VehBrand", vec![]),
                Feature::boolean("VehGas", "Diesel", "Regular"),
                Feature::numerical("Density"),
                Feature::categorical("Region", vec![]),
            ],
        }
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn feature(&self, name: &str) -> Result<&Feature> {
        Ok(&self.features[self.index_of(name)?])
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn k_cat(&self) -> usize {
        self.features.iter().filter(|f| f.is_categorical()).count()
    }

    /// Numerical plus boolean features.
    pub fn k_num(&self) -> usize {
        self.k() - self.k_cat()
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn check(&self) -> Result<()> {
        let mut names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        names.push(&self.response);
        names.push(&self.exposure);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::Config("duplicate column names in schema".into()));
        }
        for f in &self.features {
            if let FeatureKind::Categorical { levels } = &f.kind {
                let mut l = levels.clone();
                l.sort();
                l.dedup();
                if l.len() != levels.len() {
                    return Err(Error::Config(format!("duplicate levels in `{}`", f.name)));
                }
            }
        }
        Ok(())
    }
}
