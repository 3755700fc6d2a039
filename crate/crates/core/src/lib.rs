//! Online multi-modal hashing.
//!
//! Training data arrives in rounds (chunks). Every category gets a frozen
//! binary code learned from a semantic embedding of its name; instance codes
//! are the sign of the sum of their categories' codes. Per-modality linear
//! hash functions are ridge regressions onto those codes, maintained exactly
//! through running sufficient statistics, and queries are encoded by fusing
//! modalities with per-instance weights derived from an auxiliary residual
//! projection.

pub mod data;
pub mod error;
pub mod eval;
pub mod hash_fn;
pub mod high_level;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod pipeline;
pub mod scenarios;
pub mod semantic;
pub mod trainer;
pub mod weights;

pub use data::{CategoryRegistry, CodeMatrix, FeatureChunk, FeatureMatrix, LabelMatrix};
pub use error::{Error, Result};
pub use trainer::{Engine, EngineConfig, EngineState};
