//! Chat-completion abstraction: message types, the agent output grammar,
//! and the scripted and live backends.

mod grammar;
mod live;
mod scripted;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub use grammar::{parse_agent_output, serialize_agent_decision};
pub use live::{wire_messages, LiveConfig, LiveModel};
pub use scripted::{ScriptEntry, ScriptedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// A confirmation suggestion carried by a tool result, kept apart from the
/// result body so it can be dropped once the agent has relayed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    /// Calls issued by an assistant message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    /// For tool messages: tool name plus canonical arguments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_key: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<Suggestion>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            tool_call_id: None,
            tool_calls: Vec::new(),
            call_key: None,
            suggestions: Vec::new(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool(tool_call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            tool_call_id: Some(tool_call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    /// Content with every attached suggestion appended: the form the
    /// message takes in an uncompressed prompt.
    pub fn full_text(&self) -> String {
        let mut s = self.content.clone();
        for sug in &self.suggestions {
            s.push('\n');
            s.push_str(&sug.text);
        }
        s
    }

    /// Same message with suggestions folded into the content.
    pub fn flattened(&self) -> ChatMessage {
        ChatMessage {
            content: self.full_text(),
            suggestions: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl ToolCall {
    pub fn new(name: &str, arguments: Value) -> Self {
        ToolCall {
            name: name.to_string(),
            arguments: match arguments {
                Value::Object(m) => m,
                _ => Map::new(),
            },
            id: None,
        }
    }

    /// Name plus compact sorted-key arguments; equal keys mean the same call.
    pub fn canonical_key(&self) -> String {
        format!("{}{}", self.name, Value::Object(self.arguments.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Actions { calls: Vec<ToolCall> },
    Respond { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub thought: String,
    pub action: Action,
}

impl AgentDecision {
    /// Drops backend-specific call ids.
    pub fn normalized(mut self) -> Self {
        if let Action::Actions { calls } = &mut self.action {
            for c in calls {
                c.id = None;
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: Value,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, parameters: Value) -> Self {
        ToolSpec {
            name: name.to_string(),
            description: description.to_string(),
            parameters,
        }
    }

    pub fn render(&self) -> String {
        format!("- {}: {} Arguments: {}", self.name, self.description, self.parameters)
    }

    pub fn to_openai(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

/// Position of a completion within a suite, used to look up scripts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScriptKey {
    pub episode: String,
    pub turn: u64,
    pub round: u32,
}

impl ScriptKey {
    pub fn new(episode: &str, turn: u64, round: u32) -> Self {
        ScriptKey {
            episode: episode.to_string(),
            turn,
            round,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    Text(String),
    /// Native function-calling response.
    Native { content: String, calls: Vec<ToolCall> },
}

impl Completion {
    /// Raw text as recorded in the conversation.
    pub fn text(&self) -> String {
        match self {
            Completion::Text(t) => t.clone(),
            Completion::Native { content, .. } => content.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("script exhausted at episode {episode} turn {turn} round {round}")]
    ScriptExhausted { episode: String, turn: u64, round: u32 },
    #[error("prompt drift at episode {episode} turn {turn} round {round}: recorded {expected}, got {actual}")]
    ScriptMismatch {
        episode: String,
        turn: u64,
        round: u32,
        expected: String,
        actual: String,
    },
    #[error("malformed script line {line}: {reason}")]
    MalformedScript { line: usize, reason: String },
}

impl LlmError {
    pub(crate) fn exhausted(key: &ScriptKey) -> Self {
        LlmError::ScriptExhausted {
            episode: key.episode.clone(),
            turn: key.turn,
            round: key.round,
        }
    }
}

pub trait ChatModel: Send {
    fn complete(
        &mut self,
        key: &ScriptKey,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
    ) -> Result<Completion, LlmError>;

    /// Whether tool specs go on the wire as native function definitions.
    fn native_tools(&self) -> bool {
        false
    }
}

/// Hex SHA-256 of the messages' JSON encoding, with suggestions flattened.
pub fn prompt_sha256(messages: &[ChatMessage]) -> String {
    let flat: Vec<ChatMessage> = messages.iter().map(ChatMessage::flattened).collect();
    let text = serde_json::to_string(&flat).expect("messages serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed output: {0}")]
pub struct MalformedOutput(pub String);

/// Turns a backend completion into a decision. Native calls win over text.
pub fn decision_from_completion(c: &Completion) -> Result<AgentDecision, MalformedOutput> {
    match c {
        Completion::Text(t) => parse_agent_output(t),
        Completion::Native { content, calls } if !calls.is_empty() => {
            let thought = content
                .strip_prefix("THOUGHT:")
                .map(|t| t.strip_prefix(' ').unwrap_or(t))
                .unwrap_or(content);
            Ok(AgentDecision {
                thought: thought.to_string(),
                action: Action::Actions {
                    calls: calls.clone(),
                },
            }
            .normalized())
        }
        Completion::Native { content, .. } => parse_agent_output(content).or_else(|_| {
            if content.trim().is_empty() {
                Err(MalformedOutput("empty response".into()))
            } else {
                Ok(AgentDecision {
                    thought: String::new(),
                    action: Action::Respond {
                        message: content.clone(),
                    },
                })
            }
        }),
    }
}

/// An error result starts with `ERROR: `.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolResult {
    Ok {
        text: String,
        suggestions: Vec<Suggestion>,
    },
    Err(String),
}

impl ToolResult {
    pub fn ok(text: impl Into<String>) -> Self {
        ToolResult::Ok {
            text: text.into(),
            suggestions: Vec::new(),
        }
    }

    pub fn err(message: impl Into<String>) -> Self {
        ToolResult::Err(message.into())
    }

    pub fn is_err(&self) -> bool {
        matches!(self, ToolResult::Err(_))
    }

    pub fn body(&self) -> String {
        match self {
            ToolResult::Ok { text, .. } => text.clone(),
            ToolResult::Err(m) => format!("ERROR: {m}"),
        }
    }
}

/// Deterministic tool message for `call`. JSON bodies are produced with
/// sorted keys by the tools themselves.
pub fn render_tool_result(call: &ToolCall, result: &ToolResult) -> ChatMessage {
    let id = call.id.clone().unwrap_or_else(|| call.name.clone());
    let mut msg = ChatMessage::tool(id, result.body());
    msg.call_key = Some(call.canonical_key());
    if let ToolResult::Ok { suggestions, .. } = result {
        msg.suggestions = suggestions.clone();
    }
    msg
}
