//! CWE-routed mixture-of-experts vulnerability detection.
//!
//! The pipeline splits the input space by CWE category ([`taxonomy`]),
//! trains one binary expert per category and a multi-class router over
//! vulnerable code ([`moe`]), and combines the top-K experts with
//! softmax-renormalized router weights. [`eval`] and [`ablate`] provide the
//! metrics and comparison variants.

pub mod ablate;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod learn;
pub mod moe;
pub mod taxonomy;

pub use error::{Error, Result};
