//! The chapters of the guide, compiled so every Rust snippet runs under
//! `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/documents.md")]
pub mod documents {}

#[doc = include_str!("../../../book/src/mention-attention.md")]
pub mod mention_attention {}

#[doc = include_str!("../../../book/src/pooling.md")]
pub mod pooling {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/gradient-checking.md")]
pub mod gradient_checking {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
