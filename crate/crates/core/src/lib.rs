//! Prompt-based transcript classification on a micro transformer.

pub mod adapters;
pub mod archive;
pub mod classify;
pub mod corpus;
pub mod evaluation;
pub mod experiment;
pub mod lm;
pub mod pipeline;
pub mod prompting;
pub mod trainer;

pub use classify::{Prediction, Strategy};
pub use corpus::{Document, Label};
pub use experiment::{ExperimentConfig, RunReport};
pub use lm::{AttentionMode, LanguageModel, ModelSpec};
pub use pipeline::{Classifier, PipelineConfig};
