//! Two-stage forecaster: per-cluster C-LSTM experts combined by a second C-LSTM.

pub mod clstm;
pub mod model;
pub mod rollout;
pub mod train;

pub use clstm::{clstm_backward, clstm_forward, CLstmModel, CLstmShape, Skip};
pub use model::{first_stage_forward, second_stage_forward, TwoStageModel};
pub use rollout::{
    evaluate, rollout, slope, step_metrics, EvalReport, RolloutResult, StepMetric, ThetaSummary,
};
pub use train::{
    fit_two_stage, sub_seed, train_first_stage, train_second_stage, SampleSet, TrainConfig,
    TwoStageFit,
};
