// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
mod fft;
pub mod field;
pub mod gi;
pub mod io;
pub mod measurement;
pub mod metrics;
pub mod objects;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
