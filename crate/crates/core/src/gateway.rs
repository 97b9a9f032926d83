//! Chat exchange with a live endpoint, a scripted fixture, or a recording.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const BASE_URL_ENV: &str = "LOOPPILOT_LLM_BASE_URL";
pub const API_KEY_ENV: &str = "LOOPPILOT_LLM_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited by the endpoint")]
    RateLimited,
    #[error("endpoint returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("scripted transcript has no more assistant turns")]
    ScriptExhausted,
    #[error("history diverges from the recording at message {0}")]
    ReplayDivergence(usize),
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("transcript line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("nothing to record: the session has no exchange")]
    EmptySession,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Checks the ordering rules: an optional leading system message, then
/// strictly alternating user/assistant turns with non-empty content.
pub fn validate_history(history: &[ChatMessage]) -> Result<(), GatewayError> {
    let body = match history.first() {
        Some(m) if m.role == Role::System => &history[1..],
        _ => history,
    };
    for (i, m) in body.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if m.role != expected {
            return Err(GatewayError::InvalidHistory(format!(
                "message {} should be {expected:?}, found {:?}",
                i + history.len() - body.len(),
                m.role
            )));
        }
        if m.content.is_empty() {
            return Err(GatewayError::InvalidHistory(format!(
                "message {} is empty",
                i + history.len() - body.len()
            )));
        }
    }
    Ok(())
}

/// SHA-256 over the serialized messages.
pub fn history_digest(history: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in history {
        h.update(serde_json::to_vec(m).expect("message serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub trait ChatAdapter: Send {
    /// Short name stored in transcript metadata.
    fn kind(&self) -> &'static str;

    /// Returns the assistant reply to `history`, which ends with a user
    /// message.
    fn send(&mut self, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError>;
}

impl<A: ChatAdapter + ?Sized> ChatAdapter for Box<A> {
    fn kind(&self) -> &'static str {
        (**self).kind()
    }

    fn send(&mut self, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        (**self).send(history)
    }
}

/// Front door used by sessions: checks preconditions and that the adapter
/// left the history untouched.
pub fn send_checked(
    adapter: &mut dyn ChatAdapter,
    history: &[ChatMessage],
) -> Result<ChatMessage, GatewayError> {
    validate_history(history)?;
    if history.last().map(|m| m.role) != Some(Role::User) {
        return Err(GatewayError::InvalidHistory("history must end with a user message".into()));
    }
    let before = history_digest(history);
    let reply = adapter.send(history)?;
    debug_assert_eq!(before, history_digest(history));
    if reply.role != Role::Assistant || reply.content.is_empty() {
        return Err(GatewayError::BadResponse("reply is not a non-empty assistant message".into()));
    }
    Ok(reply)
}

/// Returns the assistant turns of a transcript in order, ignoring content
/// of the other turns.
pub struct ScriptedAdapter {
    replies: Vec<String>,
    next: usize,
}

impl ScriptedAdapter {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            next: 0,
        }
    }

    pub fn from_transcript(t: &Transcript) -> Self {
        Self::new(
            t.messages
                .iter()
                .filter(|m| m.role == Role::Assistant)
                .map(|m| m.content.clone()),
        )
    }

    pub fn remaining(&self) -> usize {
        self.replies.len() - self.next
    }
}

impl ChatAdapter for ScriptedAdapter {
    fn kind(&self) -> &'static str {
        "scripted"
    }

    fn send(&mut self, _history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        let reply = self.replies.get(self.next).ok_or(GatewayError::ScriptExhausted)?;
        self.next += 1;
        Ok(ChatMessage::assistant(reply.clone()))
    }
}

/// Strict playback: the outgoing history must equal the recording's prefix.
pub struct ReplayAdapter {
    recording: Vec<ChatMessage>,
}

impl ReplayAdapter {
    pub fn new(recording: Vec<ChatMessage>) -> Self {
        Self { recording }
    }

    pub fn from_transcript(t: &Transcript) -> Self {
        Self::new(t.messages.clone())
    }
}

impl ChatAdapter for ReplayAdapter {
    fn kind(&self) -> &'static str {
        "replay"
    }

    fn send(&mut self, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        if let Some(i) = history
            .iter()
            .zip(&self.recording)
            .position(|(a, b)| a != b)
        {
            return Err(GatewayError::ReplayDivergence(i));
        }
        if history.len() > self.recording.len() {
            return Err(GatewayError::ReplayDivergence(self.recording.len()));
        }
        match self.recording.get(history.len()) {
            Some(m) if m.role == Role::Assistant => Ok(m.clone()),
            Some(_) => Err(GatewayError::ReplayDivergence(history.len())),
            None => Err(GatewayError::ScriptExhausted),
        }
    }
}

/// Adapter backed by a closure; used for deterministic scripted policies.
pub struct FnAdapter<F>(pub F);

impl<F> ChatAdapter for FnAdapter<F>
where
    F: FnMut(&[ChatMessage]) -> Result<String, GatewayError> + Send,
{
    fn kind(&self) -> &'static str {
        "scripted"
    }

    fn send(&mut self, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        (self.0)(history).map(ChatMessage::assistant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_s() -> u64 {
    120
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

/// Chat-completions client. Network failures and rate limiting are retried
/// with exponential backoff; other HTTP errors surface immediately.
pub struct LiveAdapter {
    base_url: String,
    api_key: Option<String>,
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveAdapter {
    pub fn new(base_url: &str, api_key: Option<String>, config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            config,
            client,
        })
    }

    pub fn from_env(config: LiveConfig) -> Result<Self, GatewayError> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| GatewayError::MissingEnv(BASE_URL_ENV))?;
        let key = std::env::var(API_KEY_ENV).ok();
        Self::new(&base, key, config)
    }

    fn attempt(&self, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: history,
            temperature: self.config.temperature,
        };
        let mut req = self
            .client
            .post(format!("{}/v1/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Network(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited);
        }
        let text = resp.text().map_err(|e| GatewayError::Network(e.to_string()))?;
        if status.is_server_error() {
            return Err(GatewayError::Network(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Http { status: status.as_u16(), body: text });
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::BadResponse("no choices".into()))?;
        Ok(ChatMessage::assistant(choice.message.content))
    }
}

impl ChatAdapter for LiveAdapter {
    fn kind(&self) -> &'static str {
        "live"
    }

    fn send(&mut self, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for i in 0..attempts {
            match self.attempt(history) {
                Ok(m) => return Ok(m),
                Err(e @ (GatewayError::Network(_) | GatewayError::RateLimited)) => {
                    last = Some(e);
                    if i + 1 < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub scenario_id: String,
    pub created_at: String,
    pub adapter_kind: String,
    /// Additional keys, e.g. the embedded scenario or an event-log digest.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl TranscriptMeta {
    pub fn new(scenario_id: &str, adapter_kind: &str) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            adapter_kind: adapter_kind.to_string(),
            extra: BTreeMap::new(),
        }
    }
}

/// Line-delimited transcript: metadata on line 1, one message per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub meta: TranscriptMeta,
    pub messages: Vec<ChatMessage>,
}

impl Transcript {
    /// Fails when `messages` holds no user/assistant exchange.
    pub fn record(meta: TranscriptMeta, messages: &[ChatMessage]) -> Result<Self, GatewayError> {
        if !messages.iter().any(|m| m.role == Role::Assistant) {
            return Err(GatewayError::EmptySession);
        }
        Ok(Self { meta, messages: messages.to_vec() })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("metadata serializes");
        out.push('\n');
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("message serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or(GatewayError::Format { line: 1, reason: "empty transcript".into() })?;
        let meta: TranscriptMeta = serde_json::from_str(first)
            .map_err(|e| GatewayError::Format { line: 1, reason: e.to_string() })?;
        let mut messages = Vec::new();
        for (i, line) in lines {
            let m: ChatMessage = serde_json::from_str(line)
                .map_err(|e| GatewayError::Format { line: i + 1, reason: e.to_string() })?;
            messages.push(m);
        }
        validate_history(&messages).map_err(|e| GatewayError::Format {
            line: 0,
            reason: e.to_string(),
        })?;
        Ok(Self { meta, messages })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history() -> Vec<ChatMessage> {
        vec![
            ChatMessage::system("sys"),
            ChatMessage::user("u1"),
            ChatMessage::assistant("a1"),
            ChatMessage::user("u2"),
            ChatMessage::assistant("a2"),
            ChatMessage::user("u3"),
        ]
    }

    #[test]
    fn scripted_exhausts() {
        let mut a = ScriptedAdapter::new(["one", "two"]);
        let h = vec![ChatMessage::user("hi")];
        assert_eq!(a.send(&h).unwrap().content, "one");
        assert_eq!(a.send(&h).unwrap().content, "two");
        assert!(matches!(a.send(&h), Err(GatewayError::ScriptExhausted)));
    }

    #[test]
    fn replay_prefix_check() {
        let mut rec = history();
        rec.push(ChatMessage::assistant("a3"));
        let mut a = ReplayAdapter::new(rec);
        assert_eq!(a.send(&history()).unwrap().content, "a3");
        let mut diverged = history();
        diverged[3] = ChatMessage::user("different");
        assert!(matches!(a.send(&diverged), Err(GatewayError::ReplayDivergence(3))));
    }

    #[test]
    fn history_rules() {
        assert!(validate_history(&history()).is_ok());
        let bad = vec![ChatMessage::user("a"), ChatMessage::system("late")];
        assert!(validate_history(&bad).is_err());
        let empty = vec![ChatMessage::user("")];
        assert!(validate_history(&empty).is_err());
        let mut adapter = ScriptedAdapter::new(["x"]);
        let ends_with_assistant = &history()[..5];
        assert!(send_checked(&mut adapter, ends_with_assistant).is_err());
    }

    #[test]
    fn transcript_format() {
        let mut msgs = history();
        msgs.push(ChatMessage::assistant("a3"));
        let t = Transcript::record(TranscriptMeta::new("demo", "scripted"), &msgs).unwrap();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), msgs.len() + 1);
        assert_eq!(Transcript::parse(&text).unwrap(), t);
        let only_system = [ChatMessage::system("s")];
        assert!(matches!(
            Transcript::record(TranscriptMeta::new("x", "scripted"), &only_system),
            Err(GatewayError::EmptySession)
        ));
        let corrupt = format!("{}\n{{not json\n", text.lines().next().unwrap());
        assert!(matches!(Transcript::parse(&corrupt), Err(GatewayError::Format { line: 2, .. })));
    }
}
