//! Client for OpenAI-compatible `chat/completions`, `completions` and
//! `embeddings` endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Capabilities, Completion, GenerationRequest, Message, Role, TokenLogprob, Usage};

/// How teacher-forced logprobs are obtained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoringMode {
    /// The endpoint cannot score continuations; NLL is unavailable.
    #[default]
    None,
    /// Legacy `completions` endpoint with `echo: true, max_tokens: 0`.
    CompletionsEcho { model: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    #[serde(default)]
    pub scoring: ScoringMode,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl OpenAiConfig {
    pub fn backend_id(&self) -> String {
        format!("openai:{}|{}", self.chat_model, self.embedding_model)
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig, api_key: impl Into<String>) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Network { message: e.to_string(), retryable: false })?;
        Ok(Self { config, api_key: api_key.into(), http })
    }

    /// Reads the key from `env_var` (e.g. `PROMPTGAUGE_API_KEY`).
    pub fn from_env(config: OpenAiConfig, env_var: &str) -> Result<Self, BackendError> {
        let key = std::env::var(env_var).map_err(|_| BackendError::Network {
            message: format!("environment variable {env_var} is not set"),
            retryable: false,
        })?;
        Self::new(config, key)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let response = self
            .http
            .post(self.url(path))
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| BackendError::Network { message: e.to_string(), retryable: true })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Network { message: e.to_string(), retryable: true })?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(BackendError::Network {
                message: format!("{path}: HTTP {status}: {}", truncate(&text, 300)),
                retryable,
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse(format!("{path}: malformed JSON: {e}")))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Flatten a chat context into a completion-style prompt ending where the
/// assistant's answer begins.
pub(crate) fn render_transcript(context: &[Message]) -> String {
    let mut out = String::new();
    for m in context {
        let label = match m.role {
            Role::System => "System",
            Role::User => "User",
            Role::Assistant => "Assistant",
        };
        out.push_str(label);
        out.push_str(": ");
        out.push_str(&m.content);
        out.push_str("\n\n");
    }
    out.push_str("Assistant:");
    out
}

fn parse_usage(body: &Value) -> Option<Usage> {
    let u = body.get("usage")?;
    Some(Usage {
        prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    })
}

pub(crate) fn parse_chat_choices(body: &Value, expected: usize) -> Result<Vec<Completion>, BackendError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::InvalidResponse("response has no choices".into()))?;
    let mut indexed: Vec<(u64, Completion)> = Vec::with_capacity(choices.len());
    for (pos, choice) in choices.iter().enumerate() {
        let index = choice.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let logprobs = choice.pointer("/logprobs/content").and_then(Value::as_array).map(|toks| {
            toks.iter()
                .filter_map(|t| {
                    Some(TokenLogprob {
                        token: t.get("token")?.as_str()?.to_string(),
                        logprob: t.get("logprob")?.as_f64()?,
                    })
                })
                .collect()
        });
        indexed.push((index, Completion { text, logprobs, usage: None }));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let mut out: Vec<Completion> = indexed.into_iter().map(|(_, c)| c).collect();
    if out.len() != expected {
        return Err(BackendError::InvalidResponse(format!(
            "asked for {expected} choices, got {}",
            out.len()
        )));
    }
    if let (Some(first), Some(usage)) = (out.first_mut(), parse_usage(body)) {
        // request-level usage is attributed to the first choice
        first.usage = Some(usage);
    }
    Ok(out)
}

/// Extract the target's tokens from an echo response: tokens whose text
/// offset falls at or after the prompt prefix.
pub(crate) fn parse_echo_logprobs(body: &Value, prefix_len: usize) -> Result<Vec<TokenLogprob>, BackendError> {
    let lp = body
        .pointer("/choices/0/logprobs")
        .ok_or_else(|| BackendError::InvalidResponse("echo response has no logprobs".into()))?;
    let field = |name: &str| {
        lp.get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::InvalidResponse(format!("logprobs.{name} missing")))
    };
    let tokens = field("tokens")?;
    let values = field("token_logprobs")?;
    let offsets = field("text_offset")?;
    let mut out = Vec::new();
    for ((tok, val), off) in tokens.iter().zip(values).zip(offsets) {
        let off = off.as_u64().unwrap_or(0) as usize;
        if off < prefix_len {
            continue;
        }
        out.push(TokenLogprob {
            token: tok.as_str().unwrap_or_default().to_string(),
            logprob: val.as_f64().ok_or_else(|| BackendError::InvalidResponse("null logprob in target span".into()))?,
        });
    }
    Ok(out)
}

impl Backend for OpenAiBackend {
    fn id(&self) -> String {
        self.config.backend_id()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { scoring: !matches!(self.config.scoring, ScoringMode::None) }
    }

    fn generate(&self, request: &GenerationRequest, sample_indices: &[u32]) -> Result<Vec<Completion>, BackendError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({ "role": role_name(m.role), "content": m.content }))
            .collect();
        let mut body = json!({
            "model": self.config.chat_model,
            "messages": messages,
            "temperature": request.temperature,
            "n": sample_indices.len(),
            "max_tokens": request.max_tokens,
        });
        if request.want_logprobs {
            body["logprobs"] = json!(true);
        }
        let response = self.post("chat/completions", &body)?;
        parse_chat_choices(&response, sample_indices.len())
    }

    fn score(&self, context: &[Message], target: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        let ScoringMode::CompletionsEcho { model } = &self.config.scoring else {
            return Err(BackendError::Unsupported("continuation scoring".into()));
        };
        let prefix = format!("{} ", render_transcript(context));
        let body = json!({
            "model": model,
            "prompt": format!("{prefix}{target}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let response = self.post("completions", &body)?;
        parse_echo_logprobs(&response, prefix.len())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({ "model": self.config.embedding_model, "input": text });
        let response = self.post("embeddings", &body)?;
        let values = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::InvalidResponse("embedding response has no data[0].embedding".into()))?;
        values
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| BackendError::InvalidResponse("non-numeric embedding entry".into())))
            .collect()
    }
}
