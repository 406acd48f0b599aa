//! Multi-label event temporal relation extraction.
//!
//! Pairs of events are scored against every well-defined temporal relation
//! and a learned per-pair threshold. A single relation above the threshold is
//! the prediction; several (or none) make the pair *Vague*, and the relations
//! that cleared the threshold explain the ambiguity. Training rewards a
//! speculated confusion set for *Vague* golds instead of penalizing them.

pub mod classifier;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod relation_algebra;
pub mod training;

pub use error::{Error, Result};
pub use relation_algebra::{Label, RelId, RelationSchema};
