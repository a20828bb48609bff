//! Encoder-Decoder and HRED models: configuration, padded batches, the
//! teacher-forced loss with its gradient, training and checkpoints.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod train;

pub use batch::{pad_and_batch, Batch};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, read_header, save_checkpoint, write_checkpoint, CheckpointHeader,
    LoadedCheckpoint, OptimizerSnapshot, FORMAT_VERSION,
};
pub use config::{Architecture, ModelConfig};
pub use gradcheck::{check_gradients, GradientCheck};
pub use loss::{compute_loss, evaluate, LossReport, LossScope};
pub use model::{Bridge, ContextState, DialogueModel, ModelParams};
pub use train::{
    evaluate_batches, optimizer_state, train, EpochMetrics, TrainConfig, TrainLog, UpdateGranularity,
};
