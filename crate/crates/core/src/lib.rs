// `!(x > y)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;

pub use error::{Error, Result};
pub mod grid;
pub mod singular;
pub mod solver;
pub mod fields;
pub mod oracle;
pub mod config;
pub mod verify;
pub mod cli;
