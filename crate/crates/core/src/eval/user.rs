//! Simulated customer driven by a persona instruction.

use crate::llm::{ChatMessage, ChatModel, ScriptKey};

pub const USER_MODEL_PROMPT: &str = include_str!("../../prompts/user_model.txt");
pub const STOP: &str = "###STOP###";
/// First agent message of every episode, shown to the user model only.
pub const AGENT_GREETING: &str = "Hi! How can I help you today?";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserReply {
    Message(String),
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("user model format error: {0}")]
pub struct UserFormatError(pub String);

/// The user model's side of the conversation: its own outputs are
/// assistant messages and the agent's replies are user messages.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSimulator {
    pub episode: String,
    pub messages: Vec<ChatMessage>,
    pub turn: u64,
}

impl UserSimulator {
    pub fn new(episode: &str, persona_instruction: &str) -> Self {
        UserSimulator {
            episode: episode.to_string(),
            messages: vec![
                ChatMessage::system(USER_MODEL_PROMPT.replace("{instruction}", persona_instruction)),
                ChatMessage::user(AGENT_GREETING),
            ],
            turn: 0,
        }
    }

    pub fn hear(&mut self, agent_reply: &str) {
        self.messages.push(ChatMessage::user(agent_reply));
    }
}

/// Text after the `Response:` header, or `None` if the header is missing
/// or nothing follows it.
pub fn parse_user_output(text: &str) -> Option<UserReply> {
    let mut lines = text.lines();
    let mut rest = None;
    for line in lines.by_ref() {
        if let Some(r) = line.trim_start().strip_prefix("Response:") {
            rest = Some(r.trim().to_string());
            break;
        }
    }
    let mut response = rest?;
    let tail: Vec<&str> = lines.map(str::trim).filter(|l| !l.is_empty()).collect();
    if !tail.is_empty() {
        if !response.is_empty() {
            response.push('\n');
        }
        response.push_str(&tail.join("\n"));
    }
    if response.is_empty() {
        return None;
    }
    if response.contains(STOP) {
        return Some(UserReply::Stop);
    }
    Some(UserReply::Message(response))
}

/// One user turn. A malformed output is retried once (round 2 of the same
/// turn key) before giving up.
pub fn simulate_user(llm: &mut dyn ChatModel, sim: &mut UserSimulator) -> Result<UserReply, UserFormatError> {
    let mut last = String::new();
    for round in 1..=2 {
        let key = ScriptKey::new(&sim.episode, sim.turn, round);
        let text = llm
            .complete(&key, &sim.messages, &[])
            .map_err(|e| UserFormatError(e.to_string()))?
            .text();
        if let Some(reply) = parse_user_output(&text) {
            sim.messages.push(ChatMessage::assistant(text));
            sim.turn += 1;
            return Ok(reply);
        }
        last = text;
    }
    Err(UserFormatError(format!("no Response section in {last:?}")))
}
