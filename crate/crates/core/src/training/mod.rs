//! Supervision, synthetic data and the training loop.

pub mod loss;
pub mod optim;
pub mod synthetic;
pub mod train;

pub use loss::{make_loss_weights, multiscale_loss, LossConfig, LossKind};
pub use optim::{Adam, LrSchedule};
pub use synthetic::{generate_synthetic, SyntheticSample};
pub use train::{evaluate_aepe, train_toy, StepRecord, TrainConfig, TrainState};
