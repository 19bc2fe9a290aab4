//! Morphosyntactic probing of contextual embeddings.
//!
//! The pipeline reads Universal Dependencies treebanks, samples balanced
//! ⟨language, POS, feature⟩ probing tasks, obtains per-layer word vectors
//! from an [`embedding::EmbeddingProvider`], trains small probes on them and
//! measures how perturbing the input sentence changes probing accuracy.
//! Positional contributions are attributed with exact Shapley values.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below name the common instantiations.

pub mod config;
pub mod embedding;
pub mod nn;
pub mod perturb;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod scalar;
pub mod shapley;
pub mod stats;
pub mod synthetic;
pub mod ud;

pub use scalar::Scalar;

/// Single-precision MLP probe used for training.
pub type MlpProbeF32 = nn::MlpProbe<f32>;
/// Double-precision MLP probe used for gradient checks.
pub type MlpProbeF64 = nn::MlpProbe<f64>;
pub type CharLstmF32 = nn::CharLstm<f32>;
pub type CharLstmF64 = nn::CharLstm<f64>;
pub type ParamSetF32 = nn::ParamSet<f32>;
pub type ParamSetF64 = nn::ParamSet<f64>;
