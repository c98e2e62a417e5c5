//! Transformer with differentiable hidden-state stacks between layers.
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod linalg;
pub mod model;
pub mod multihead;
pub mod stack;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
