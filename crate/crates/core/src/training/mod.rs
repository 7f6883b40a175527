//! Loss, training loop and parameter updates for the compensation module.

mod config;
mod evaluate;
mod optimizer;
mod trainer;
mod unroll;

pub use config::{
    default_loss_scale, ArchitectureConfig, OptimizerConfig, Schedule, TrainConfig, DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS, LOSS_SCALE_MAX, LOSS_SCALE_MIN,
};
pub use evaluate::{baseline_mse, evaluate_mse, evaluate_with, Evaluation};
pub use optimizer::Optimizer;
pub use trainer::{curves_csv, fit, BatchResult, EpochRecord, TrainReport, Trainer, TrainerState};
pub use unroll::{backward, compute_loss, loss_from_rows, unroll, Unroll, UnrollSpec};
