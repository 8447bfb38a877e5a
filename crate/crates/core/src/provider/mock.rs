//! Scripted in-process chat-completion server for offline runs and tests.
//!
//! A [`MockScript`] maps request text to a queue of replies. Each matching
//! request consumes the next reply; the last one repeats. Requests are
//! recorded so callers can assert on what was sent.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{Message, Role};

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    /// A successful completion carrying `content`.
    Content { content: String },
    /// An error status with a body.
    Status { status: u16, body: String },
    /// A 200 response with this exact body.
    Raw { raw: String },
}

impl MockReply {
    pub fn content(s: impl Into<String>) -> Self {
        MockReply::Content { content: s.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Exact match on the final user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Substring match on the instruction message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_contains: Option<String>,
    pub replies: Vec<MockReply>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Reply when no rule matches.
    pub default: MockReply,
}

impl MockScript {
    pub fn constant(content: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default: MockReply::content(content),
        }
    }

    pub fn with_rule(mut self, text: impl Into<String>, replies: Vec<MockReply>) -> Self {
        self.rules.push(MockRule {
            text: Some(text.into()),
            instruction_contains: None,
            replies,
        });
        self
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// What the server saw for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: Option<f64>,
    pub authorization: Option<String>,
}

impl RecordedRequest {
    /// Content of the last user message.
    pub fn user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

struct State {
    script: MockScript,
    cursors: HashMap<usize, usize>,
    requests: Vec<RecordedRequest>,
}

impl State {
    fn reply_for(&mut self, req: &RecordedRequest) -> MockReply {
        let user = req.user_text().unwrap_or_default();
        let instruction = req
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let hit = self.script.rules.iter().position(|r| {
            r.text.as_deref().is_none_or(|t| t == user)
                && r.instruction_contains
                    .as_deref()
                    .is_none_or(|s| instruction.contains(s))
        });
        match hit {
            Some(i) if !self.script.rules[i].replies.is_empty() => {
                let replies = &self.script.rules[i].replies;
                let cursor = self.cursors.entry(i).or_default();
                let reply = replies[(*cursor).min(replies.len() - 1)].clone();
                *cursor += 1;
                reply
            }
            _ => self.script.default.clone(),
        }
    }
}

#[derive(Deserialize)]
struct IncomingRequest {
    #[serde(default)]
    model: String,
    #[serde(default)]
    messages: Vec<Message>,
    #[serde(default)]
    temperature: Option<f64>,
}

/// Running mock server. Stops when dropped.
pub struct MockServer {
    url: String,
    state: Arc<Mutex<State>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves `script` on a background thread.
    pub fn start(script: MockScript) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("mock server has no IP address"))?;
        let state = Arc::new(Mutex::new(State {
            script,
            cursors: HashMap::new(),
            requests: Vec::new(),
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || serve(server, state, stop))
        };
        Ok(Self {
            url: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            state,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.lock().expect("mock state").requests.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().expect("mock state").requests.len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(server: tiny_http::Server, state: Arc<Mutex<State>>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        let mut request = match server.recv_timeout(Duration::from_millis(20)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(_) => break,
        };
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);
        let authorization = request
            .headers()
            .iter()
            .find(|h| h.field.equiv("Authorization"))
            .map(|h| h.value.to_string());
        let (status, payload) = match serde_json::from_str::<IncomingRequest>(&body) {
            Ok(incoming) => {
                let recorded = RecordedRequest {
                    model: incoming.model,
                    messages: incoming.messages,
                    temperature: incoming.temperature,
                    authorization,
                };
                let mut st = state.lock().expect("mock state");
                let reply = st.reply_for(&recorded);
                st.requests.push(recorded);
                match reply {
                    MockReply::Content { content } => (
                        200,
                        serde_json::json!({
                            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
                        })
                        .to_string(),
                    ),
                    MockReply::Status { status, body } => (status, body),
                    MockReply::Raw { raw } => (200, raw),
                }
            }
            Err(e) => (400, format!("bad request: {e}")),
        };
        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        let response = tiny_http::Response::from_string(payload)
            .with_status_code(status)
            .with_header(header);
        let _ = request.respond(response);
    }
}
