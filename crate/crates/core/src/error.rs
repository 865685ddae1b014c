use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Image size is not a multiple of the coarsest stride.
    Padding {
        height: usize,
        width: usize,
        pad_bottom: usize,
        pad_right: usize,
    },
    Shape { op: &'static str, detail: String },
    Config(String),
    Schedule { expected: usize, got: usize },
    LossWeights { predictions: usize, weights: usize },
    /// Training produced a non-finite loss.
    Diverged { step: usize },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Padding {
                height,
                width,
                pad_bottom,
                pad_right,
            } => write!(
                f,
                "image size {height}x{width} is not divisible by 16; pad by {pad_bottom} rows and {pad_right} columns"
            ),
            Error::Shape { op, detail } => write!(f, "{op}: {detail}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Schedule { expected, got } => write!(
                f,
                "iteration schedule has {got} entries but the model has {expected} scales"
            ),
            Error::LossWeights {
                predictions,
                weights,
            } => write!(f, "{weights} loss weights given for {predictions} predictions"),
            Error::Diverged { step } => write!(f, "loss became non-finite at step {step}"),
        }
    }
}

impl core::error::Error for Error {}
