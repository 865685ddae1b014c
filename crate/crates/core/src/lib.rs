//! Coarse-to-fine recurrent optical flow with cross-covariance attention.
//!
//! Everything here is pure computation over `alloc`: tensors, a reverse-mode
//! tape, the model (feature/context encoders, global-context and
//! motion-grouping attention blocks, shared GRU estimator), the multi-scale
//! loss, synthetic training data, a training loop, evaluation metrics and the
//! attention-footprint formulas. File formats and the CLI live in the
//! `xcaflow` crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod bench;
pub mod color;
pub mod config;
pub mod error;
pub mod estimator;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use estimator::{EstimateOptions, FlowEstimate, FlowField, FlowModel, IterationSchedule, SchedulePreset};
pub use features::ImageTensor;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
