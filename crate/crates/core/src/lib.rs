//! Host intrusion detection over system-call traces.
//!
//! Traces are cut into fixed-length windows, turned into trivial, count or
//! TF-IDF feature vectors, optionally reduced with PCA, and classified by a
//! small MLP. Training runs either centralized or as an in-process federated
//! simulation with plain (FA) or sample-weighted (WFA) parameter averaging.

pub mod alert;
pub mod bundle;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod federated;
pub mod nn;
pub mod pca;
pub mod pipeline;
pub mod rng;

pub use bundle::{load_model_bundle, save_model_bundle, ModelBundle, Prediction, TrainingMetadata};
pub use dataset::{ClientShard, Dataset, Label, SynthConfig, Trace};
pub use error::{Error, Result};
pub use eval::{EvalReport, MetricsReport, Verdict};
pub use features::{FeatureMatrix, Featurizer, Representation};
pub use federated::{Aggregator, FedConfig, RoundRecord};
pub use nn::{MlpParams, TrainConfig};
pub use pca::PcaModel;
pub use pipeline::{PcaMode, PipelineConfig};
