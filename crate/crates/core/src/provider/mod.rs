//! Live prediction source over a chat-completion HTTP API.
//!
//! Wire format: `POST {endpoint}` with bearer auth and a JSON body
//! `{"model", "messages": [{"role", "content"}], "temperature"}`. The reply
//! text is read from `response_pointer` (default
//! `/choices/0/message/content`). [`mock::MockServer`] speaks the same format.

mod batch;
mod client;
pub mod mock;
mod prompt;

pub use batch::{batch_predict, read_log, BatchRecord, BatchResult, Outcome};
pub use client::{
    Answer, ChatClient, LabelOutcome, ProviderConfig, Translation, UnknownLabelPolicy, DEFAULT_API_KEY_ENV,
};
pub use prompt::{
    binary_prompt, render_prompt, ClassifyPrompt, Exemplar, Message, PromptTemplate, Role, Task, CLASSIFICATION_PROMPT,
    FINE_TUNED_CLASSIFICATION_PROMPT, LANGUAGE_DETECTION_PROMPT, TRANSLATION_PROMPT,
};
