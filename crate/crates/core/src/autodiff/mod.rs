//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod tape;

pub mod gradcheck;

pub use tape::{Gradients, Tape, Var};
