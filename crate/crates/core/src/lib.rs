//! Measurement and intervention lab for on-policy recognition in language
//! models.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod intervention;
pub mod linalg;
pub mod prompts;
pub mod report;
pub mod rng;
pub mod runtime;
pub mod scalar;
pub mod semantic;
pub mod tensorfile;
pub mod tokenizer;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Weights = runtime::ModelWeights<f64>;
pub type Cache = runtime::KVCache<f64>;
pub type Steering = runtime::SteeringSpec<f64>;
pub type Patch = runtime::PatchSpec<f64>;
pub type Centroids = geometry::CentroidSet<f64>;
