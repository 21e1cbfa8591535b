//! Run configuration, optimizers, checkpoints, the training loop and evaluation.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{OptimizerConfig, RunConfig};
pub use eval::{
    build_estimator, evaluate, evaluate_manifest, Estimator, MixtureEstimator, ModelEstimator, OracleEstimator,
    ESTIMATOR_NAMES,
};
pub use optim::{clip_grad_norm, Adam, Optimizer, OptimizerRegistry, OptimizerState, Sgd};
pub use trainer::{read_loss_log, train, StepStats, TrainOutcome, Trainer};
