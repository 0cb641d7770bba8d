// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod penalty;
pub mod stats;

pub use error::{Error, Result};
pub use grid::TimeGrid;
