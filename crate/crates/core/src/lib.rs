//! Weak-supervision tooling for long-form question answering retrieval.
//!
//! The crate mines "silver" relevant passages by matching first-stage
//! retrieval candidates against reference long-form answers and direct
//! answers, emits training data for cross-encoder re-rankers, re-ranks
//! candidate pools through pluggable scorers, and evaluates both retrieval
//! runs and generated answers.
//!
//! Pipeline shape:
//!
//! ```text
//! corpus ──► retrieval (BM25 index or ingested run) ──► candidate pools
//!     pools × dataset ──► matchers (lexical / semantic / perplexity)
//!         ──► silver selection (positives + sampled negatives)
//!             ──► training pairs ──► external trainer
//!     pools ──► rerank (served scorer or in-process matcher) ──► run
//!     run × dataset ──► evalmetrics ──► report
//! ```
//!
//! Per-question loops are data-parallel; they run on rayon when the
//! `parallel` feature (default) is enabled and fall back to sequential
//! iteration otherwise. Both paths produce identical results.

pub mod corpus;
pub mod error;
pub mod evalmetrics;
pub mod exec;
pub mod matchers;
pub mod rerank;
pub mod retrieval;
pub mod sampling;
pub mod services;
pub mod silver;
pub mod textproc;

#[cfg(any(test, feature = "mock-services"))]
pub mod mock;

pub use error::{Error, Result};
