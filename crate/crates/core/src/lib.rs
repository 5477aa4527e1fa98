#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod catalog;
pub mod correlations;
pub mod error;
pub mod gutzwiller;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
