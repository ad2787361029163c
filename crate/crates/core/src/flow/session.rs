use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::FlowError;

pub const SESSION_VERSION: u64 = 1;

/// A live state machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowInstance {
    pub instance_id: String,
    pub flow_type: String,
    pub state: String,
    pub params: Map<String, Value>,
    pub slots: Map<String, Value>,
    pub internals: Map<String, Value>,
    pub paused: bool,
    /// Turn index at instantiation.
    pub created_turn: u64,
    /// Instantiation order within the session.
    pub seq: u64,
}

impl FlowInstance {
    pub fn param_str(&self, name: &str) -> Option<&str> {
        self.params.get(name).and_then(Value::as_str)
    }

    /// Resolves a template variable: internals, then slots, then params.
    pub fn lookup(&self, name: &str) -> Option<&Value> {
        self.internals
            .get(name)
            .or_else(|| self.slots.get(name))
            .or_else(|| self.params.get(name))
    }
}

/// Per-conversation state carried between turns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionState {
    pub authenticated_user_id: Option<String>,
    pub active_flows: Vec<FlowInstance>,
    pub turn_index: u64,
    #[serde(default)]
    pub next_seq: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u64,
    session: SessionState,
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flow(&self, instance_id: &str) -> Option<&FlowInstance> {
        self.active_flows.iter().find(|f| f.instance_id == instance_id)
    }

    pub(crate) fn flow_mut(&mut self, instance_id: &str) -> Option<&mut FlowInstance> {
        self.active_flows
            .iter_mut()
            .find(|f| f.instance_id == instance_id)
    }
}

/// Versioned JSON envelope `{"version": 1, "session": ...}`.
pub fn serialize_session(session: &SessionState) -> String {
    serde_json::to_string(&Envelope {
        version: SESSION_VERSION,
        session: session.clone(),
    })
    .expect("session serializes")
}

pub fn deserialize_session(text: &str) -> Result<SessionState, FlowError> {
    let envelope: Envelope =
        serde_json::from_str(text).map_err(|e| FlowError::MalformedSession(e.to_string()))?;
    if envelope.version != SESSION_VERSION {
        return Err(FlowError::MalformedSession(format!(
            "unsupported session version {}",
            envelope.version
        )));
    }
    Ok(envelope.session)
}

/// One acceptable input at the current state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedInput {
    /// key -> rendered value pattern
    pub input: std::collections::BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires_slots: Vec<String>,
}

impl ExpectedInput {
    pub fn render(&self) -> String {
        let body: Vec<String> = self
            .input
            .iter()
            .map(|(k, v)| format!("\"{k}\": {v}"))
            .collect();
        let mut s = format!("{{{}}}", body.join(", "));
        if !self.requires_slots.is_empty() {
            s.push_str(&format!(
                " (requires slots: {})",
                self.requires_slots.join(", ")
            ));
        }
        s
    }
}

/// State-dependent view of an instance, shown to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowInfo {
    pub instance_id: String,
    pub flow_type: String,
    pub state: String,
    pub paused: bool,
    pub terminal: bool,
    pub filled_slots: Map<String, Value>,
    pub missing_slots: Vec<String>,
    pub instructions: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suggested_message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suggestion_id: Option<String>,
    pub expected_inputs: Vec<ExpectedInput>,
}

impl FlowInfo {
    /// Compact text block for prompts and tool results. The suggested
    /// message is rendered separately so it can be elided once used.
    pub fn render_body(&self) -> String {
        let mut s = format!(
            "[flow {} {}] state={}{}",
            self.instance_id,
            self.flow_type,
            self.state,
            if self.paused { " (paused)" } else { "" }
        );
        if !self.filled_slots.is_empty() {
            let filled: Vec<String> = self
                .filled_slots
                .iter()
                .map(|(k, v)| format!("{k}={}", render_value(v)))
                .collect();
            s.push_str(&format!("\nfilled slots: {}", filled.join(", ")));
        }
        if !self.missing_slots.is_empty() {
            s.push_str(&format!("\nmissing slots: {}", self.missing_slots.join(", ")));
        }
        s.push_str("\ninstructions: ");
        s.push_str(&self.instructions);
        if !self.expected_inputs.is_empty() {
            let inputs: Vec<String> = self.expected_inputs.iter().map(|e| e.render()).collect();
            s.push_str(&format!("\nexpected inputs: {}", inputs.join(" | ")));
        }
        s
    }

    pub fn render_suggestion(&self) -> Option<String> {
        self.suggested_message
            .as_ref()
            .map(|m| format!("suggested message: {m}"))
    }

    pub fn render(&self) -> String {
        match self.render_suggestion() {
            Some(sug) => format!("{}\n{sug}", self.render_body()),
            None => self.render_body(),
        }
    }
}

pub(crate) fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Substitutes `{name}` placeholders. Braces not followed by an identifier
/// and `}` are left untouched, so literal JSON survives.
pub(crate) fn render_template(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let ident_len = after
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
            .count();
        let is_placeholder = ident_len > 0
            && after.as_bytes().get(ident_len) == Some(&b'}')
            && after.as_bytes()[0].is_ascii_alphabetic();
        if is_placeholder {
            let name = &after[..ident_len];
            out.push_str(&lookup(name).unwrap_or_else(|| "(not provided)".to_string()));
            rest = &after[ident_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_substitution() {
        let out = render_template("order {order_id}: {\"x\": 1} {missing}", |n| {
            (n == "order_id").then(|| "#W1".to_string())
        });
        assert_eq!(out, "order #W1: {\"x\": 1} (not provided)");
        assert_eq!(render_template("{", |_| None), "{");
        assert_eq!(render_template("{a", |_| None), "{a");
    }

    #[test]
    fn empty_session_round_trip() {
        let s = SessionState::new();
        assert_eq!(deserialize_session(&serialize_session(&s)).unwrap(), s);
    }

    #[test]
    fn truncated_session_is_malformed() {
        let text = serialize_session(&SessionState::new());
        let cut = &text[..text.len() - 3];
        assert!(matches!(
            deserialize_session(cut),
            Err(FlowError::MalformedSession(_))
        ));
    }

    #[test]
    fn version_mismatch_is_malformed() {
        let text = serialize_session(&SessionState::new()).replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            deserialize_session(&text),
            Err(FlowError::MalformedSession(m)) if m.contains("version")
        ));
    }
}
