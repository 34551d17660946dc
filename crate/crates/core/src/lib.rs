//! Hierarchical sentence-embedding pipeline at desk scale: tiny transformer
//! encoders with optional cross-attention, a convolution + attention
//! refinement head, pseudo-label data curation via embedding retrieval and
//! error filtering, and a ridge-stacked model ensemble. Every numeric
//! component carries an analytic backward pass verified against central
//! finite differences.

pub mod checkpoint;
pub mod config;
pub mod curation;
pub mod dataset;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod refinement;
pub mod rng;
pub mod synthetic;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::Tensor;
