//! Encoder-decoder transformers with configurable position encodings, a copy
//! decoder, layer sharing and tagging heads, plus generators for algorithmic
//! length-generalization tasks, a trainer and an evaluator.

pub mod tensor;
pub mod error;
pub mod model;
pub mod data;
pub mod train;
pub mod eval;
pub mod experiment;

pub use error::{Error, Result};
