#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod grad;
pub mod model;
pub mod train;

pub use error::{Error, Result};
