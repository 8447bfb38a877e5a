use std::path::PathBuf;

use thiserror::Error;

use crate::labels::{Emotion, LabelSet, Language, ModelId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("unknown {set} label {raw:?}")]
    UnknownLabel { set: &'static str, raw: String },
    #[error("model name must not be empty")]
    EmptyModelName,
    #[error("model priority list must not be empty")]
    EmptyPriority,
    #[error("model {0:?} listed more than once")]
    DuplicateModel(String),
}

impl LabelError {
    pub(crate) fn unknown<L: LabelSet>(raw: &str) -> Self {
        LabelError::UnknownLabel {
            set: L::SET_NAME,
            raw: raw.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },
    #[error("{path}:{line}: {label}")]
    UnknownLabel {
        path: PathBuf,
        line: u64,
        label: LabelError,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, line: u64, id: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no item carries a gold label")]
    NoGoldLabels,
    #[error("nothing to evaluate: total support is zero")]
    EmptyEvaluation,
    #[error("{} evaluated item(s) lack a language tag: {}", .0.len(), preview(.0))]
    MissingLanguageTags(Vec<String>),
    #[error("model {model}: {source}")]
    Model {
        model: ModelId,
        #[source]
        source: Box<MetricsError>,
    },
    #[error("score {value} for {what} is outside [0, 1]")]
    ScoreOutOfRange { what: String, value: f64 },
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 5;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("ballot for item {0:?} has no votes")]
    EmptyBallot(String),
    #[error("item {0:?} has no language tag")]
    MissingLanguage(String),
    #[error("model {model} has no prediction for item {id:?}")]
    MissingPrediction { model: ModelId, id: String },
    #[error("skill profile lacks scores for: {}", .0.iter().map(|(m, l)| format!("{m}/{l}")).collect::<Vec<_>>().join(", "))]
    IncompleteProfile(Vec<(ModelId, Language)>),
    #[error("skill profile lacks {what} for model {model}")]
    MissingScore { model: ModelId, what: String },
    #[error("model {0} is not in the configured priority order")]
    UnknownModel(ModelId),
    #[error("no class was affirmed for item {0:?} and no fallback is configured")]
    NoResolution(String),
    #[error("no ranked predictions supplied")]
    EmptyInput,
    #[error("model {model} ranks {label} both first and second")]
    DuplicateRanking { model: ModelId, label: Emotion },
    #[error("binary verdicts for item {id:?} missing class {class}")]
    MissingVerdict { id: String, class: Emotion },
    #[error("no model voted on item {0:?} after fallback")]
    Unresolvable(String),
    #[error("{} of {total} item(s) unresolvable, above the allowed fraction {allowed}", .unresolved.len())]
    ThresholdExceeded {
        unresolved: Vec<(String, EnsembleError)>,
        total: usize,
        allowed: f64,
    },
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("environment variable {0} holding the API token is not set")]
    AuthMissing(String),
    #[error("HTTP error {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no recognizable label after {attempts} attempt(s); last response {raw:?}")]
    UnknownLabelExhausted { raw: String, attempts: u32 },
    #[error("text must not be empty")]
    EmptyText,
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("batch log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            ProviderError::Transport(_) | ProviderError::Malformed(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}
