//! Versioned JSON model files.
//!
//! Layout: `format`, `version`, `kind`, `schema_hash`, then the schema, model
//! spec and rebalancing factor, then the body. Neural parameter tensors are
//! stored as base64 of their little-endian `f64` bytes, row-major.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ModelBody, ModelKind, ModelSpec, Network, NeuralModel, TrainedModel};
use crate::data::{FeatureSchema, NeuralPreprocessor};
use crate::error::{Error, Result};
use crate::glm::{FittedGlm, GlmParams};
use crate::tensor::{ParamEntry, ParamStore, Tensor};

pub const FORMAT: &str = "claimfreq-model";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "body", rename_all = "snake_case")]
enum StoredBody {
    Glm {
        glm: FittedGlm,
    },
    Neural {
        network: Network,
        preprocessor: NeuralPreprocessor,
        residual_glm: Option<FittedGlm>,
        start_glm: Option<GlmParams>,
        params: Vec<StoredParam>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kind: ModelKind,
    schema_hash: String,
    schema: FeatureSchema,
    spec: ModelSpec,
    rebalance: f64,
    #[serde(flatten)]
    body: StoredBody,
}

fn encode(t: &Tensor) -> String {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(p: StoredParam) -> Result<ParamEntry> {
    let bytes = STANDARD
        .decode(&p.data)
        .map_err(|e| Error::ModelFormat(format!("parameter `{}`: {e}", p.name)))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ModelFormat(format!("parameter `{}` is truncated", p.name)));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let value = Tensor::new(p.shape, data).map_err(|e| Error::ModelFormat(format!("parameter `{}`: {e}", p.name)))?;
    Ok(ParamEntry {
        name: p.name,
        value,
        trainable: p.trainable,
    })
}

pub fn to_json(m: &TrainedModel) -> Result<String> {
    let body = match &m.body {
        ModelBody::Glm(g) => StoredBody::Glm { glm: g.clone() },
        ModelBody::Neural(n) => StoredBody::Neural {
            network: n.network.clone(),
            preprocessor: n.preprocessor.clone(),
            residual_glm: n.residual_glm.clone(),
            start_glm: n.start_glm.clone(),
            params: n
                .store
                .entries()
                .iter()
                .map(|e| StoredParam {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    trainable: e.trainable,
                    data: encode(&e.value),
                })
                .collect(),
        },
    };
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        kind: m.kind,
        schema_hash: m.schema.hash(),
        schema: m.schema.clone(),
        spec: m.spec.clone(),
        rebalance: m.rebalance,
        body,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let header: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::ModelFormat(format!("not a JSON document: {e}")))?;
    if header.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::ModelFormat("missing model format marker".into()));
    }
    let version = header.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(VERSION)) {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version:?}, expected {VERSION}"
        )));
    }
    let file: ModelFile =
        serde_json::from_value(header).map_err(|e| Error::ModelFormat(format!("corrupt model file: {e}")))?;
    let found = file.schema.hash();
    if found != file.schema_hash {
        return Err(Error::SchemaMismatch {
            expected: file.schema_hash,
            found,
        });
    }
    let body = match file.body {
        StoredBody::Glm { glm } => {
            if !file.kind.is_glm() {
                return Err(Error::ModelFormat(format!("{} stored with a GLM body", file.kind)));
            }
            ModelBody::Glm(glm)
        }
        StoredBody::Neural {
            network,
            preprocessor,
            residual_glm,
            start_glm,
            params,
        } => {
            if file.kind.is_glm() {
                return Err(Error::ModelFormat(format!("{} stored with a neural body", file.kind)));
            }
            let entries = params.into_iter().map(decode).collect::<Result<Vec<_>>>()?;
            ModelBody::Neural(Box::new(NeuralModel {
                network,
                store: ParamStore::from_entries(entries),
                preprocessor,
                residual_glm,
                start_glm,
            }))
        }
    };
    Ok(TrainedModel {
        kind: file.kind,
        schema: file.schema,
        spec: file.spec,
        body,
        rebalance: file.rebalance,
    })
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(m)?).map_err(|e| Error::file(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    from_json(&text)
}

/// Loads and insists on the model kind and the schema of the data it will
/// score.
pub fn load_model_for(path: impl AsRef<Path>, kind: ModelKind, schema: &FeatureSchema) -> Result<TrainedModel> {
    let m = load_model(path)?;
    if m.kind != kind {
        return Err(Error::WrongKind(format!("file holds {}, expected {kind}", m.kind)));
    }
    let (expected, found) = (schema.hash(), m.schema.hash());
    if expected != found {
        return Err(Error::SchemaMismatch { expected, found });
    }
    Ok(m)
}
