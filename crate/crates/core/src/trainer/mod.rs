//! Training loop, configuration, optimizer and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod data;
mod train;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::{PoseFormat, TrainConfig};
pub use data::{conditioning, Batch, TrainData};
pub use train::{run, Forward, Models, TrainState};
