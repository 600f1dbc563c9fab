//! Training loop, run records and checkpoint evaluation.

mod config;
mod eval;
mod run;

pub use config::TrainConfig;
pub use eval::{evaluate, evaluate_checkpoint, prepare_input, write_predictions, EvalTasks, Evaluation, ImagePrediction};
pub use run::{
    train, train_model, BestCheckpoint, DivergedBatch, EpochRecord, LossSummary, RunRecord, StepLog, DIVERGED_FILE,
    TRAIN_CONFIG_KEY,
};
