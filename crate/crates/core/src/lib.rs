//! Relation-specific attention over entity mentions for document-level
//! relation extraction.
//!
//! An entity mentioned several times in a document is usually collapsed into
//! one vector by pooling its mention vectors. This crate implements that
//! baseline (mean, max and logsumexp pooling) next to an attentive
//! alternative: every relation owns a trainable prototype, each mention is
//! scored against it, and the entity is represented, per relation, by the
//! softmax-weighted sum of its mentions. Entity pairs are then scored with one
//! bilinear form per relation.
//!
//! All gradients are derived by hand; [`numerics::grad_check`] verifies them
//! against central differences.

pub mod aggregation;
pub mod benchmark;
pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
