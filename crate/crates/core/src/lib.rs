//! Scores how faithfully image generation models render instructed text.
//!
//! The flow is: take an instruction with a quoted target text, extract the
//! text actually rendered in a generated image ([`extraction`]), compare the
//! two strings with an ensemble of edit- and alignment-based similarities
//! ([`metrics`]), and aggregate per model ([`pipeline`]). [`meta_eval`]
//! checks metrics against pairwise human preferences, and [`corruption`]
//! produces controlled degraded text for sensitivity tests.

pub mod chat;
pub mod corpus;
pub mod corruption;
pub mod extraction;
pub mod jsonl;
pub mod meta_eval;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod stats;
pub mod text;

pub use metrics::{AlignmentParams, MetricKind, MetricScore};
pub use text::{normalize_text, NormalizedText};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/corruption.md")]
    mod corruption {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/meta_eval.md")]
    mod meta_eval {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
