//! Synthetic-blur data, optimizer, checkpoints and the training loop.

pub mod blur;
pub mod checkpoint;
pub mod optim;
pub mod scenes;
mod trainer;

pub use blur::{make_blur_kernel, synthesize_pair, BlurKernel, BlurKind, BlurSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use scenes::synthetic_scene;
pub use trainer::{
    loss_csv, train, train_with, Dataset, LossRecord, OutputPaths, TrainConfig, TrainOutcome,
};
