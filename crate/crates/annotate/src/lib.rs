//! Pairwise annotation service: qualifies raters against a gold set, serves
//! image pairs in randomized left/right order, collects three-question
//! judgments until the agreement rule settles each pair, and exports the
//! aggregated labels for meta-evaluation.

pub mod server;
pub mod store;

pub use server::{router, serve, ServeConfig};
pub use store::{AnnotateError, GoldItem, PairTask, RaterRecord, Store, TaskImage, TaskPayload, TaskState};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/annotation.md")]
mod book {}
