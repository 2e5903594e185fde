//! Poisson claim-frequency modelling for non-life insurance pricing.
//!
//! The crate covers the whole modelling chain for exposure-weighted claim
//! counts:
//!
//! * [`tensor`]: dense tensors, a tape-based reverse-mode autodiff engine and
//!   the neural layers (dense, layer norm, embeddings, multi-head attention,
//!   ReGLU, dropout) plus AdamW/Nadam.
//! * [`data`]: CSV ingestion, cleaning, splits, scaling, one-hot/dummy
//!   encoding, binning, declarative GLM feature pipelines and a synthetic
//!   portfolio generator.
//! * [`glm`]: Newton/IRLS fitting of log-link Poisson GLMs with an exposure
//!   offset.
//! * [`models`]: feed-forward networks, CANN, LocalGLMnet, the feature
//!   tokenizer transformer and its GLM hybrids (CAFTT, LocalGLMftt).
//! * [`training`]: deviance loss, minibatch training with early stopping,
//!   rebalancing, ensembling, metrics and local-GLM attributions.
//! * [`experiment`]: config-driven orchestration behind the `claimfreq`
//!   binary.

pub mod data;
pub mod error;
pub mod experiment;
pub mod glm;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Seedable generator used for every random draw in the crate.
pub type Rng64 = rand_chacha::ChaCha8Rng;

/// Generator seeded from a plain integer.
pub fn rng_from_seed(seed: u64) -> Rng64 {
    use rand::SeedableRng;
    Rng64::seed_from_u64(seed)
}
