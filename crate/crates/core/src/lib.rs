//! Quantization-model scaling laws on multitask sparse parity.

// `!(x > 0.0)` style checks are how NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod eigen;
pub mod error;
pub mod harness;
pub mod io;
pub mod mlp;
pub mod parity;
pub mod pipeline;
pub mod plot;
pub mod qdg;
pub mod seed;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
