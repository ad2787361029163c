//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{ChatMessage, ChatModel, Completion, LlmError, Role, ScriptKey, ToolCall, ToolSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    /// Send tool specs as native function definitions.
    pub native_tools: bool,
    pub retries: u32,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        LiveConfig {
            endpoint: endpoint.to_string(),
            api_key: None,
            model: model.to_string(),
            temperature: 0.0,
            native_tools: false,
            retries: 2,
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads `LLM_ENDPOINT`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("LLM_ENDPOINT").ok().filter(|s| !s.is_empty())?;
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| "gpt-4o".to_string());
        let mut cfg = LiveConfig::new(&endpoint, &model);
        cfg.api_key = std::env::var("LLM_API_KEY").ok().filter(|s| !s.is_empty());
        Some(cfg)
    }

    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct LiveModel {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveModel {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::TransportError(e.to_string()))?;
        Ok(LiveModel { config, client })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    pub fn request_body(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": wire_messages(messages, self.config.native_tools),
        });
        if self.config.native_tools && !tools.is_empty() {
            body["tools"] = Value::Array(tools.iter().map(ToolSpec::to_openai).collect());
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<Completion, (LlmError, bool)> {
        let mut req = self.client.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (LlmError::TransportError(e.to_string()), true))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (LlmError::TransportError(e.to_string()), true))?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((
                LlmError::TransportError(format!("HTTP {status}: {}", truncate(&text, 200))),
                retry,
            ));
        }
        parse_response(&text).map_err(|e| (e, false))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ChatModel for LiveModel {
    fn complete(
        &mut self,
        _key: &ScriptKey,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
    ) -> Result<Completion, LlmError> {
        let body = self.request_body(messages, tools);
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(c) => return Ok(c),
                Err((e, retry)) if !retry || attempt >= self.config.retries => return Err(e),
                Err(_) => {
                    std::thread::sleep(Duration::from_millis(200 << attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn native_tools(&self) -> bool {
        self.config.native_tools
    }
}

/// Converts the internal trace to the wire shape. In text mode tool results
/// travel as user messages; in native mode assistant calls without a
/// matching tool message are dropped.
pub fn wire_messages(messages: &[ChatMessage], native: bool) -> Vec<Value> {
    let answered: Vec<&str> = messages
        .iter()
        .filter(|m| m.role == Role::Tool)
        .filter_map(|m| m.tool_call_id.as_deref())
        .collect();
    messages
        .iter()
        .map(|m| {
            let content = m.full_text();
            match (m.role, native) {
                (Role::System, _) => json!({"role": "system", "content": content}),
                (Role::User, _) => json!({"role": "user", "content": content}),
                (Role::Assistant, true) if !m.tool_calls.is_empty() => {
                    let calls: Vec<Value> = m
                        .tool_calls
                        .iter()
                        .filter(|c| c.id.as_deref().is_some_and(|id| answered.contains(&id)))
                        .map(|c| {
                            json!({
                                "id": c.id,
                                "type": "function",
                                "function": {
                                    "name": c.name,
                                    "arguments": Value::Object(c.arguments.clone()).to_string(),
                                }
                            })
                        })
                        .collect();
                    if calls.is_empty() {
                        json!({"role": "assistant", "content": content})
                    } else {
                        json!({"role": "assistant", "content": content, "tool_calls": calls})
                    }
                }
                (Role::Assistant, _) => json!({"role": "assistant", "content": content}),
                (Role::Tool, true) => json!({
                    "role": "tool",
                    "tool_call_id": m.tool_call_id,
                    "content": content,
                }),
                (Role::Tool, false) => json!({
                    "role": "user",
                    "content": format!(
                        "TOOL RESULT ({}):\n{content}",
                        m.tool_call_id.as_deref().unwrap_or("tool")
                    ),
                }),
            }
        })
        .collect()
}

pub(crate) fn parse_response(text: &str) -> Result<Completion, LlmError> {
    let bad = |m: String| LlmError::TransportError(format!("malformed response: {m}"));
    let v: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let message = v
        .pointer("/choices/0/message")
        .ok_or_else(|| bad("no choices[0].message".into()))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let Some(raw_calls) = message.get("tool_calls").and_then(Value::as_array) else {
        return Ok(Completion::Text(content));
    };
    if raw_calls.is_empty() {
        return Ok(Completion::Text(content));
    }
    let mut calls = Vec::new();
    for c in raw_calls {
        let name = c
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("tool call without name".into()))?;
        let arguments = match c.pointer("/function/arguments") {
            Some(Value::String(s)) if s.trim().is_empty() => Map::new(),
            Some(Value::String(s)) => match serde_json::from_str(s) {
                Ok(Value::Object(m)) => m,
                _ => return Err(bad(format!("arguments of {name} are not a JSON object"))),
            },
            Some(Value::Object(m)) => m.clone(),
            _ => Map::new(),
        };
        calls.push(ToolCall {
            name: name.to_string(),
            arguments,
            id: c.get("id").and_then(Value::as_str).map(str::to_string),
        });
    }
    Ok(Completion::Native { content, calls })
}
