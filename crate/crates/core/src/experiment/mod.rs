//! Config-driven experiment runs: data preparation, fits over seed sets,
//! evaluation, ensembles, attributions and the markdown report, with every
//! written file indexed in a manifest.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    ensemble_groups, parse_rows, AttributeRequest, AttributeSummary, Evaluation, Experiment, FitRecord,
    PrepareSummary, Prepared, Run, Selection, RECONSTRUCTION_TOLERANCE,
};
pub use config::{DataSource, ExperimentConfig, RosterEntry, RosterItem, TrainOverrides};
pub use manifest::{sha256_hex, ArtifactRecord, RunManifest};
