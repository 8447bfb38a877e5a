//! Cross-lingual emotion classification with ensembles of language models.
//!
//! The crate covers the whole offline pipeline: loading labelled corpora and
//! per-model prediction files ([`ingest`]), F1 evaluation and skill profiles
//! ([`metrics`]), ensemble strategies driven by those profiles
//! ([`ensemble`]), a chat-completion client that produces predictions from
//! fixed prompts ([`provider`]) and a Monte-Carlo simulator for comparing
//! strategies on synthetic models ([`simulate`]).

pub mod ensemble;
pub mod error;
mod fsutil;
pub mod ingest;
pub mod labels;
pub mod metrics;
pub mod provider;
pub mod simulate;

pub use error::{EnsembleError, IngestError, LabelError, MetricsError, ProviderError, SimulateError};
pub use fsutil::write_atomic;
pub use labels::{normalize_label, Ballot, Emotion, LabelSet, LabeledItem, Language, ModelId, Priority, Verdict};
