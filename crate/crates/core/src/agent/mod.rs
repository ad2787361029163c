//! The per-turn reasoning loop. Each round assembles the prompt, asks the
//! model for a decision and either executes the listed tool calls in order
//! or ends the turn with a reply.

mod tools;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::context::{assemble_prompt, enrich, WorkingMemory};
use crate::flow::{FlowEngine, SessionState};
use crate::llm::{
    decision_from_completion, prompt_sha256, render_tool_result, Action, AgentDecision, ChatMessage,
    ChatModel, LlmError, ScriptKey, Suggestion, ToolCall, ToolResult,
};
use crate::retail::RetailDatabase;
use crate::retail_flows::retail_flow_engine;

pub use tools::{execute_tool, RegisteredTool, ToolContext, ToolError, ToolKind, ToolRegistry};

pub const DEFAULT_MAX_ROUNDS: u32 = 8;

const RULES_PROMPT: &str = include_str!("../../prompts/agent_rules.txt");
const FLOWS_PROMPT: &str = include_str!("../../prompts/agent_flows.txt");
const DIRECT_PROMPT: &str = include_str!("../../prompts/agent_direct.txt");
const FORMAT_PROMPT: &str = include_str!("../../prompts/agent_format.txt");
const SINGLE_CALL_NOTE: &str = "Each ACTIONS array must hold exactly one tool call.";
const SINGLE_CALL_ERROR: &str = "only one tool call per round is executed; call it again in a later round";

/// Feature toggles. `baseline()` is the plain tool-calling agent; the
/// default enables everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub multi_function_calls: bool,
    pub llm_powered_tools: bool,
    pub optimized_read_tools: bool,
    pub smag: bool,
    pub acm: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            multi_function_calls: true,
            llm_powered_tools: true,
            optimized_read_tools: true,
            smag: true,
            acm: true,
        }
    }
}

impl AblationConfig {
    pub fn baseline() -> Self {
        AblationConfig {
            multi_function_calls: false,
            llm_powered_tools: false,
            optimized_read_tools: false,
            smag: false,
            acm: false,
        }
    }

    /// Compact label such as `mfc+llm+read+smag+acm`, or `baseline`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.multi_function_calls, "mfc"),
            (self.llm_powered_tools, "llm"),
            (self.optimized_read_tools, "read"),
            (self.smag, "smag"),
            (self.acm, "acm"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

/// Conversation state carried across turns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Conversation {
    pub episode: String,
    pub session: SessionState,
    pub trace: Vec<ChatMessage>,
    pub consumed_suggestion_ids: BTreeSet<String>,
}

impl Conversation {
    pub fn new(episode: &str) -> Self {
        Conversation {
            episode: episode.to_string(),
            ..Conversation::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TurnError {
    #[error("no reply after {0} rounds")]
    MaxRoundsExceeded(u32),
    #[error("unparseable agent output after retry: {0}")]
    MalformedOutput(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub call: ToolCall,
    pub result: String,
    pub is_error: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<Suggestion>,
}

/// One line of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub episode: String,
    pub turn: u64,
    pub round: u32,
    pub prompt_sha256: String,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<AgentDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default)]
    pub tool_calls: Vec<ToolCallRecord>,
    pub revision_before: u64,
    pub revision_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub episode: String,
    pub turn: u64,
    pub user_message: String,
    pub rounds: Vec<RoundTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TurnTrace {
    /// One JSON object per round.
    pub fn to_jsonl(&self) -> String {
        self.rounds
            .iter()
            .map(|r| serde_json::to_string(r).expect("round trace serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("malformed transcript: {0}")]
    MalformedTranscript(String),
}

/// Reads a transcript written by [`TurnTrace::to_jsonl`].
pub fn parse_transcript(text: &str) -> Result<Vec<RoundTrace>, TranscriptError> {
    let mut rounds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RoundTrace = serde_json::from_str(line)
            .map_err(|e| TranscriptError::MalformedTranscript(format!("line {}: {e}", i + 1)))?;
        rounds.push(r);
    }
    if rounds.is_empty() {
        return Err(TranscriptError::MalformedTranscript("no rounds".into()));
    }
    Ok(rounds)
}

pub struct Agent {
    pub config: AblationConfig,
    pub registry: ToolRegistry,
    pub engine: FlowEngine<RetailDatabase>,
    pub base_instructions: String,
    pub max_rounds: u32,
}

impl Agent {
    pub fn new(config: AblationConfig) -> Self {
        let mut base = String::from(RULES_PROMPT.trim_end());
        base.push_str("\n\n");
        base.push_str(if config.smag { FLOWS_PROMPT } else { DIRECT_PROMPT }.trim_end());
        base.push_str("\n\n");
        base.push_str(FORMAT_PROMPT.trim_end());
        if !config.multi_function_calls {
            base.push('\n');
            base.push_str(SINGLE_CALL_NOTE);
        }
        Agent {
            config,
            registry: ToolRegistry::new(&config),
            engine: retail_flow_engine(),
            base_instructions: base,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn with_max_rounds(mut self, max_rounds: u32) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn working_memory(&self, conv: &Conversation) -> WorkingMemory {
        WorkingMemory {
            base_system_instructions: self.base_instructions.clone(),
            tool_specs: self.registry.specs(),
            flow_infos: self.engine.render_flow_infos(&conv.session),
            trace: conv.trace.clone(),
            consumed_suggestion_ids: conv.consumed_suggestion_ids.clone(),
        }
    }

    /// Runs one user turn. On failure the conversation and the database are
    /// restored to their state at entry; the trace still records every round.
    pub fn handle_turn(
        &self,
        conv: &mut Conversation,
        db: &mut RetailDatabase,
        user_message: &str,
        llm: &mut dyn ChatModel,
        tool_llm: &mut dyn ChatModel,
    ) -> (Result<String, TurnError>, TurnTrace) {
        let entry = conv.clone();
        let snapshot = db.snapshot();
        let mut trace = TurnTrace {
            episode: conv.episode.clone(),
            turn: conv.session.turn_index,
            user_message: user_message.to_string(),
            rounds: Vec::new(),
            reply: None,
            error: None,
        };
        let result = self.run_rounds(conv, db, user_message, llm, tool_llm, &mut trace);
        match &result {
            Ok(reply) => trace.reply = Some(reply.clone()),
            Err(e) => {
                *conv = entry;
                db.restore(&snapshot);
                trace.error = Some(e.to_string());
            }
        }
        (result, trace)
    }

    fn run_rounds(
        &self,
        conv: &mut Conversation,
        db: &mut RetailDatabase,
        user_message: &str,
        llm: &mut dyn ChatModel,
        tool_llm: &mut dyn ChatModel,
        trace: &mut TurnTrace,
    ) -> Result<String, TurnError> {
        let turn = conv.session.turn_index;
        let text = if self.config.acm {
            enrich(user_message, db)
        } else {
            user_message.to_string()
        };
        conv.trace.push(ChatMessage::user(text));
        let mut parse_retried = false;

        for round in 1..=self.max_rounds {
            let memory = self.working_memory(conv);
            let prompt = assemble_prompt(&memory, &conv.session, self.config.acm);
            let key = ScriptKey::new(&conv.episode, turn, round);
            let completion = llm.complete(&key, &prompt.messages, &prompt.tools)?;
            let raw = completion.text();
            let mut record = RoundTrace {
                episode: conv.episode.clone(),
                turn,
                round,
                prompt_sha256: prompt_sha256(&prompt.messages),
                raw_output: raw.clone(),
                decision: None,
                parse_error: None,
                tool_calls: Vec::new(),
                revision_before: db.revision,
                revision_after: db.revision,
            };

            let decision = match decision_from_completion(&completion) {
                Ok(d) => d,
                Err(e) => {
                    record.parse_error = Some(e.0.clone());
                    trace.rounds.push(record);
                    if parse_retried {
                        return Err(TurnError::MalformedOutput(e.0));
                    }
                    parse_retried = true;
                    conv.trace.push(ChatMessage::assistant(raw));
                    conv.trace.push(ChatMessage::user(format!(
                        "ERROR: {e}. Reply again using the required output format."
                    )));
                    continue;
                }
            };
            record.decision = Some(decision.clone());

            match decision.action {
                Action::Respond { message } => {
                    conv.trace.push(ChatMessage::assistant(raw));
                    let mut memory = self.working_memory(conv);
                    memory.consume_suggestions();
                    conv.consumed_suggestion_ids = memory.consumed_suggestion_ids;
                    conv.session.turn_index += 1;
                    trace.rounds.push(record);
                    return Ok(message);
                }
                Action::Actions { calls } => {
                    let calls: Vec<ToolCall> = calls
                        .into_iter()
                        .enumerate()
                        .map(|(i, mut c)| {
                            c.id = Some(format!("call_{turn}_{round}_{i}"));
                            c
                        })
                        .collect();
                    let mut assistant = ChatMessage::assistant(raw);
                    assistant.tool_calls = calls.clone();
                    conv.trace.push(assistant);
                    for (i, call) in calls.iter().enumerate() {
                        let result = if i > 0 && !self.config.multi_function_calls {
                            ToolResult::err(SINGLE_CALL_ERROR)
                        } else {
                            let mut ctx = ToolContext {
                                db: &mut *db,
                                session: &mut conv.session,
                                engine: &self.engine,
                                tool_llm: &mut *tool_llm,
                                key: key.clone(),
                            };
                            execute_tool(&self.registry, call, &mut ctx)
                                .unwrap_or_else(|e| ToolResult::err(e.to_string()))
                        };
                        record.tool_calls.push(ToolCallRecord {
                            call: call.clone(),
                            result: result.body(),
                            is_error: result.is_err(),
                            suggestions: match &result {
                                ToolResult::Ok { suggestions, .. } => suggestions.clone(),
                                ToolResult::Err(_) => Vec::new(),
                            },
                        });
                        conv.trace.push(render_tool_result(call, &result));
                    }
                    record.revision_after = db.revision;
                    trace.rounds.push(record);
                }
            }
        }
        Err(TurnError::MaxRoundsExceeded(self.max_rounds))
    }
}
