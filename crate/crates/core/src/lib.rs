// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod json;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use tape::{Tape, TapeError, Var};
pub use tensor::Tensor;
