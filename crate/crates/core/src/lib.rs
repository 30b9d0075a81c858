//! Attributing text from distilled student models to their teacher model.

pub mod classify;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod features;
pub mod hashing;
pub mod metrics;
pub mod perplexity;
pub mod plot;
pub mod scalar;
pub mod similarity;
pub mod tagger;
pub mod templates;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 instantiations of the generic numeric types.
pub type SparseVec = features::SparseVector<f64>;
pub type Matrix = features::FeatureMatrix<f64>;
pub type Attributor = classify::AttributorModel<f64>;
pub type Embeddings = similarity::TokenEmbeddingSequence<f64>;
