//! Invariant audio signatures from projections onto transformed template
//! orbits, stacked into a four-layer cascade, with a ridge classifier and
//! evaluation harness.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hash;
pub mod invariance;
pub mod par;
pub mod pipeline;
pub mod pooling;
pub mod signal_io;
pub mod spectrogram;
pub mod synth;
pub mod template_bank;
pub mod transforms;

pub use error::{Error, Result};
