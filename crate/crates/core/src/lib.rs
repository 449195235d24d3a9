//! Recurrent acoustic-model building blocks: stacked, residual and
//! layer-trajectory LSTMs with optional factorized gates, exact
//! backpropagation through time, a two-lane pipelined evaluator and an
//! analytical per-frame operation counter.

pub mod cells;
pub mod costmodel;
pub mod error;
pub mod harness;
pub mod kvfile;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
