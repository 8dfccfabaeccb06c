//! Compositional image-text retrieval on synthetic attribute data.
//!
//! The crate implements a residual gated composer, a graph-convolutional
//! auxiliary training stream over a correlation graph of training triplets,
//! a two-stage trainer, and a retrieval evaluator, all on top of a small
//! reverse-mode differentiable tensor engine.

pub mod checkpoint;
pub mod commands;
pub mod composer;
pub mod data;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
