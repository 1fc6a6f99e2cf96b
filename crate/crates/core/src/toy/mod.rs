//! Desk-scale laboratory that produces real training dynamics: synthetic
//! tasks, a shared-encoder multi-head network trained with SGD, and the
//! two-stage fine-tuning pipeline.

pub mod data;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod train;

use thiserror::Error;

use crate::dynamics::DynamicsError;

pub use data::{generate_dataset, EvalSplit, Example, SyntheticTaskSpec, TaskData};
pub use model::{Affine, MultiHeadModel, Prediction};
pub use pipeline::{run_experiment, run_pipeline, ExperimentConfig, PipelineReport};
pub use train::{
    evaluate, grad_check, grad_check_with, second_stage, train, GradCheckReport, Schedule,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid task spec {0}")]
    InvalidSpec(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("model has no head for task `{0}`")]
    MissingHead(String),
    #[error("example `{example_id}` has {got} features, model expects {expected}")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        example_id: String,
    },
    #[error("non-finite loss on task `{task}` in epoch {epoch}")]
    NonfiniteLoss { task: String, epoch: usize },
    #[error("subset for task `{task}` names unknown example `{example_id}`")]
    UnknownExampleId { task: String, example_id: String },
    #[error("task `{0}` has no examples in the requested split")]
    EmptySplit(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl ToyError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidSpec(_) => "toy_lab.invalid_spec",
            Self::InvalidConfig(_) => "toy_lab.invalid_config",
            Self::MissingHead(_) => "toy_lab.missing_head",
            Self::DimensionMismatch { .. } => "toy_lab.dimension_mismatch",
            Self::NonfiniteLoss { .. } => "toy_lab.nonfinite_loss",
            Self::UnknownExampleId { .. } => "toy_lab.unknown_example_id",
            Self::EmptySplit(_) => "toy_lab.empty_split",
            Self::Dynamics(e) => e.code(),
        }
    }
}
