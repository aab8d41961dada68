pub mod config;
pub mod error;
pub mod rng;
pub mod tape;
pub mod model;
pub mod nn;
pub mod loss;
pub mod data;
pub mod trainer;
pub mod inference;
pub mod metrics;
pub mod manifest;
pub mod experiment;
pub mod harness;

pub use config::{ExperimentConfig, Profile, SeriesSpec, TrainConfig, Variant};
pub use error::{Error, Result};
pub use experiment::{EvalSettings, Granularity, PreparedData};
pub use inference::ThresholdMode;
pub use metrics::{Metric, Prf};
pub use model::RocaModel;
