//! Blocking chat-completion client with retry and strict label parsing.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{render_prompt, ClassifyPrompt, Exemplar, Message, PromptTemplate, Task};
use crate::error::ProviderError;
use crate::labels::{normalize_label, Emotion, LabelSet, Language, Verdict};

pub const DEFAULT_API_KEY_ENV: &str = "PROVIDER_API_KEY";

/// What to do when a model never answers with a recognizable label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLabelPolicy {
    Error,
    /// Emotion tasks only; other tasks abstain.
    MapToNeutral,
    #[default]
    Abstain,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_concurrency() -> usize {
    4
}
fn default_response_pointer() -> String {
    "/choices/0/message/content".to_string()
}
fn default_backoff_base_ms() -> u64 {
    1000
}
fn default_backoff_factor() -> f64 {
    2.0
}
fn default_max_backoff_ms() -> u64 {
    30_000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Send requests without a token instead of failing when it is absent.
    #[serde(default = "default_true")]
    pub require_auth: bool,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub unknown_label_policy: UnknownLabelPolicy,
    #[serde(default)]
    pub classify_prompt: ClassifyPrompt,
    /// Few-shot demonstrations, one per class by convention.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<Exemplar>,
    /// JSON pointer to the reply text inside the response body.
    #[serde(default = "default_response_pointer")]
    pub response_pointer: String,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            require_auth: true,
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            max_concurrency: default_concurrency(),
            temperature: 0.0,
            unknown_label_policy: UnknownLabelPolicy::default(),
            classify_prompt: ClassifyPrompt::default(),
            exemplars: Vec::new(),
            response_pointer: default_response_pointer(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_factor: default_backoff_factor(),
            max_backoff_ms: default_max_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::InvalidConfig(m.to_string()));
        if self.endpoint.trim().is_empty() {
            return bad("endpoint must not be empty");
        }
        if self.max_concurrency < 1 {
            return bad("max_concurrency must be at least 1");
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return bad("timeout_secs must be positive");
        }
        if self.backoff_factor.is_nan() || self.backoff_factor < 1.0 {
            return bad("backoff_factor must be at least 1");
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based), before jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_base_ms as f64 * self.backoff_factor.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

/// A parsed answer, or an abstention when the policy allows one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelOutcome<L> {
    Label(L),
    Abstained { raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer<T> {
    pub value: T,
    /// HTTP requests issued, retries included.
    pub attempts: u32,
    /// Last raw reply text.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    pub text: String,
    /// The reply equals the input, which happens for code-mixed text.
    pub unchanged: bool,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

/// Shareable across threads; every call is independent.
pub struct ChatClient {
    cfg: ProviderConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl ChatClient {
    /// Resolves the token from the environment and validates the config.
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let token = std::env::var(&cfg.api_key_env).ok().filter(|t| !t.is_empty());
        if token.is_none() && cfg.require_auth {
            return Err(ProviderError::AuthMissing(cfg.api_key_env.clone()));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build();
        Ok(Self { cfg, token, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn template(&self, task: Task) -> PromptTemplate {
        PromptTemplate::for_task(task, self.cfg.classify_prompt)
    }

    /// One request, no retries.
    fn send(&self, messages: &[Message]) -> Result<String, ProviderError> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = ChatRequest {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
        };
        let response = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(ProviderError::Http {
                    status,
                    body: excerpt(&body),
                });
            }
            Err(e) => return Err(ProviderError::Transport(e.to_string())),
        };
        let text = response
            .into_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Malformed(format!("body is not JSON ({e}): {}", excerpt(&text))))?;
        match json.pointer(&self.cfg.response_pointer) {
            Some(serde_json::Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            _ => Err(ProviderError::Malformed(format!(
                "no text at {}: {}",
                self.cfg.response_pointer,
                excerpt(&text)
            ))),
        }
    }

    /// Sends with exponential backoff on retryable failures.
    fn send_with_retry(&self, messages: &[Message], attempts: &AtomicU32) -> Result<String, ProviderError> {
        let mut retry = 0;
        loop {
            attempts.fetch_add(1, Ordering::Relaxed);
            match self.send(messages) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && retry < self.cfg.max_retries => {
                    let jitter = 0.5 + rand::random::<f64>();
                    std::thread::sleep(self.cfg.backoff(retry).mul_f64(jitter));
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Asks for a label from `L`, re-asking on unparseable replies, then
    /// applying the unknown-label policy.
    pub fn ask_label<L: LabelSet>(&self, task: Task, text: &str) -> Result<Answer<LabelOutcome<L>>, ProviderError> {
        let messages = render_prompt(&self.template(task), text, &self.cfg.exemplars)?;
        let attempts = AtomicU32::new(0);
        let mut raw = String::new();
        for _ in 0..=self.cfg.max_retries {
            raw = self.send_with_retry(&messages, &attempts)?;
            if let Ok(label) = normalize_label::<L>(&raw) {
                return Ok(Answer {
                    value: LabelOutcome::Label(label),
                    attempts: attempts.into_inner(),
                    raw,
                });
            }
        }
        let attempts = attempts.into_inner();
        let value = match self.cfg.unknown_label_policy {
            UnknownLabelPolicy::Error => return Err(ProviderError::UnknownLabelExhausted { raw, attempts }),
            UnknownLabelPolicy::MapToNeutral => match normalize_label::<L>(Emotion::Neutral.as_str()) {
                Ok(neutral) => LabelOutcome::Label(neutral),
                Err(_) => LabelOutcome::Abstained { raw: raw.clone() },
            },
            UnknownLabelPolicy::Abstain => LabelOutcome::Abstained { raw: raw.clone() },
        };
        Ok(Answer { value, attempts, raw })
    }

    pub fn classify(&self, text: &str) -> Result<Answer<LabelOutcome<Emotion>>, ProviderError> {
        self.ask_label(Task::Classify, text)
    }

    pub fn classify_binary(&self, text: &str, class: Emotion) -> Result<Answer<LabelOutcome<Verdict>>, ProviderError> {
        self.ask_label(Task::ClassifyBinary(class), text)
    }

    pub fn detect_language(&self, text: &str) -> Result<Answer<LabelOutcome<Language>>, ProviderError> {
        self.ask_label(Task::DetectLanguage, text)
    }

    /// Returns the reply verbatim.
    pub fn translate_to_english(&self, text: &str) -> Result<Answer<Translation>, ProviderError> {
        let messages = render_prompt(&self.template(Task::Translate), text, &[])?;
        let attempts = AtomicU32::new(0);
        let reply = self.send_with_retry(&messages, &attempts)?;
        Ok(Answer {
            value: Translation {
                unchanged: reply == text,
                text: reply.clone(),
            },
            attempts: attempts.into_inner(),
            raw: reply,
        })
    }
}

pub(crate) fn excerpt(s: &str) -> String {
    const MAX: usize = 200;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
