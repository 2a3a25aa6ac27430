//! Curation engine for synthetic extractive-QA data.
//!
//! A teacher model generates question/answer pairs from unlabeled contexts
//! with a single in-language demonstration. A weak labeler (the current
//! student) re-answers every synthetic question; pairs it agrees with are
//! promoted into a monotone silver set, the student is fine-tuned on silver
//! then gold data, and the loop repeats until a stopping rule fires.
//!
//! Module map:
//!
//! - [`corpus`]: record model, SQuAD-format IO, subsetting, dedup, JSONL store
//! - [`promptgen`]: 1-shot prompt rendering, sampling draws, generation pass
//! - [`backend`]: wire protocol, HTTP client with retries, scripted mock
//! - [`curator`]: post-processing validation and the weak-labeler filter
//! - [`qametrics`]: EM / token-F1 scoring with per-language normalization
//! - [`orchestrator`]: round loop, train plans, stopping rule, journal, reports

pub mod backend;
pub mod corpus;
pub mod curator;
pub mod orchestrator;
pub mod promptgen;
pub mod qametrics;

pub use backend::{Backend, BackendError, ModelRef};
pub use corpus::{Answer, Dataset, ExemplarPool, QaRecord, Source};
pub use qametrics::{MetricReport, MetricValue, NormalizationProfile};
