//! Reference-free summarization evaluation with LLM judges.
//!
//! The crate wires a complete evaluation pipeline: prompt assembly from
//! template files, a completion backend (OpenAI-compatible HTTP or a seeded
//! deterministic mock), score parsing and aggregation, test-phase filtering
//! and binning, and segment-level Kendall's Tau meta-evaluation against gold
//! human scores.
//!
//! Entry points:
//! - [`dataset`] — corpora and result records (line-oriented JSON on disk)
//! - [`prompt`] — template families, variants, demonstrations, rendering
//! - [`backend`] — completion clients ([`backend::BackendDescriptor`])
//! - [`scoring`] — score parsing and the Direct/Logprob/Approximation
//!   aggregation methods
//! - [`postprocess`] — redundancy filtering and score binning
//! - [`meta_eval`] — Kendall tau-b with tie accounting, rationale error
//!   taxonomy tabulation
//! - [`pipeline`] — end-to-end orchestration used by the `sumjudge` binary

pub mod aspect;
pub mod backend;
pub mod config;
pub mod dataset;
pub mod meta_eval;
pub mod pipeline;
pub mod postprocess;
pub mod prompt;
pub mod scoring;
pub mod stable_hash;

pub use aspect::Aspect;
pub use scoring::ScoreScale;
