//! Document-level sequence-to-sequence toolkit built around
//! alignment-driven window attention.
//!
//! The crate provides a small reverse-mode tape over dense `f64` arrays
//! ([`numerics`]), three attention variants ([`attention`]), target-source
//! anchor functions ([`alignment`]), document handling ([`document`]), a
//! toy encoder-decoder transformer with its training objectives
//! ([`model`]), document decoding strategies ([`decoding`]) and
//! discourse-targeted metrics ([`evaluation`]), plus synthetic tasks
//! ([`tasks`]) for end-to-end checks.

pub mod alignment;
pub mod attention;
pub mod decoding;
pub mod document;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod tasks;

pub use error::{Error, Result};
