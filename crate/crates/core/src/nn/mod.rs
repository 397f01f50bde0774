//! The small convolutional classifier, its losses, optimiser and checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use loss::{classification_loss, Label};
pub use model::{build_model, forward, ForwardRecord, Layer, ModelConfig, Param, Params};
pub use optim::{lr_schedule, Schedule, Sgd, SgdConfig};
