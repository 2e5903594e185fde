//! Ingestion, cleaning, splitting and encoding of claim-count portfolios.

pub mod clean;
pub mod dataset;
pub mod design;
pub mod encode;
pub mod features;
pub mod schema;
pub mod split;
pub mod synth;

pub use clean::{clean, Cap, CleaningReport, CleaningRules, RangeFilter};
pub use dataset::{Column, Dataset};
pub use design::{GlmDesign, Term};
pub use encode::{
    bin_labels, bin_numeric, dummy_encode, encode_categorical, fit_standard_scaler, one_hot_encode,
    CategoricalEncoding, ColumnProvenance, EncodedMatrix, NumericExpr, ScalerParams, Transform,
};
pub use features::{NeuralFeatureConfig, NeuralFeatures, NeuralPreprocessor};
pub use schema::{Feature, FeatureKind, FeatureSchema};
pub use split::{read_index_file, split, with_validation, write_index_file, SplitIndices, SplitPolicy};
pub use synth::{SynthSpec, SyntheticData};
