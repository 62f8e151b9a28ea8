//! The full detector pipeline, its ablations, batching and training.

mod batch;
pub mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LOSS_FILE, META_FILE, WEIGHTS_FILE};
pub use batch::{expand, sample_batch, BatchSubgraph};
pub use config::{ModelConfig, Variant, GAT_LAYERS};
pub use forward::{forward, plain_relation_sum, predict, ForwardOutput, Prediction, PreparedGraph};
pub use params::{ModelParams, Params};
pub use train::{class_pools, epoch_order, split_loss, train, train_from, EpochRecord, TrainOutcome};
