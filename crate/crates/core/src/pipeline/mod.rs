//! Two-stage training, configuration, checkpoints and run logging.

mod checkpoint;
mod config;
mod container;
mod dataset;
pub mod gradcheck;
mod runlog;
mod train;

pub use checkpoint::{iteration_rng, load_centers, save_centers, Checkpoint};
pub use config::{BatchConfig, DataConfig, EvalConfig, LossWeights, Stage, TrainConfig};
pub use container::{Container, FORMAT_VERSION, MAGIC};
pub use dataset::{Dataset, DatasetManifest};
pub use runlog::{LogRow, RunLog};
pub use train::{
    evaluate_checkpoint, evaluate_network, init_finetune, init_pretrain, predict_labels, run_finetune, run_pretrain,
    validation_features, RunOptions,
};
