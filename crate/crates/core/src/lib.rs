#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod design_space;
pub mod encoding;
pub mod error;
pub mod neural;
pub mod phase_field;
pub mod pipeline;
pub mod surface;

pub use error::{Error, Result};
