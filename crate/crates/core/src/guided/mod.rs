//! Guided training: hyperparameters learned each step from the gradient of a
//! held-out guidance loss through one optimizer step.

mod reparam;
mod runlog;
mod train;

pub use reparam::{
    activate, meta_adam_update, Activation, HyperName, MetaConfig, Reparam, RAW_CLAMP,
};
pub use runlog::{RunLog, StepRecord, RUNLOG_HEADER};
pub use train::{
    guided_train, hypergradient, GuidanceMode, GuidedHypers, HyperGrads, StepSnapshot, TrainConfig,
    Trainer,
};
