//! End-to-end episodes between a simulated user and the agent, graded
//! against the expected database end state and required outputs.

mod suite;
mod user;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AblationConfig, Agent, Conversation, TurnError, TurnTrace};
use crate::llm::{ChatModel, LiveConfig, LiveModel, LlmError, ScriptedModel};
use crate::retail::{commit_unconfirmed, CommitError, MutationRequest, RetailDatabase};

pub use suite::{render_rate, run_suite, EpisodeSummary, SuiteReport};
pub use user::{
    parse_user_output, simulate_user, UserFormatError, UserReply, UserSimulator, AGENT_GREETING,
    STOP, USER_MODEL_PROMPT,
};

fn default_max_turns() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub persona_instruction: String,
    #[serde(default)]
    pub expected_mutations: Vec<MutationRequest>,
    #[serde(default)]
    pub expected_outputs: Vec<String>,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed task {path}: {reason}")]
    Malformed { path: String, reason: String },
}

impl TaskSpec {
    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = fs::read_to_string(path).map_err(|e| TaskError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| TaskError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Every `*.json` file directly inside `dir`, ordered by task id.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, TaskError> {
        let io = |e: std::io::Error| TaskError::Io {
            path: dir.display().to_string(),
            reason: e.to_string(),
        };
        let mut tasks = Vec::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "json") && path.is_file() {
                tasks.push(Self::load(&path)?);
            }
        }
        tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        Ok(tasks)
    }

    /// Seed database with the expected mutations applied in order.
    pub fn reference_db(&self, seed: &RetailDatabase) -> Result<RetailDatabase, CommitError> {
        let mut db = seed.clone();
        for (i, m) in self.expected_mutations.iter().enumerate() {
            commit_unconfirmed(&mut db, m, &format!("{}#{i}", self.task_id))?;
        }
        Ok(db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub db_match: bool,
    pub outputs_found: Vec<bool>,
    /// Set when the episode ended on an agent, user or harness failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GradeResult {
    pub fn success(&self) -> bool {
        self.error.is_none() && self.db_match && self.outputs_found.iter().all(|f| *f)
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Case-insensitive, whitespace-normalized substring check of every
/// expected output against the concatenated agent replies.
pub fn grade(task: &TaskSpec, seed: &RetailDatabase, final_db: &RetailDatabase, replies: &[String]) -> GradeResult {
    let (db_match, error) = match task.reference_db(seed) {
        Ok(reference) => (reference.canonical_json() == final_db.canonical_json(), None),
        Err(e) => (false, Some(format!("expected mutations do not apply: {e}"))),
    };
    let said = normalize(&replies.join("\n"));
    GradeResult {
        db_match,
        outputs_found: task
            .expected_outputs
            .iter()
            .map(|o| said.contains(&normalize(o)))
            .collect(),
        error,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Stopped,
    MaxTurns,
    AgentError(String),
    UserError(String),
    /// Transport or setup failure outside the agent's control.
    HarnessError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueLine {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub task_id: String,
    pub config: AblationConfig,
    pub dialogue: Vec<DialogueLine>,
    pub turns: Vec<TurnTrace>,
    pub outcome: EpisodeOutcome,
    pub final_db_sha256: String,
}

impl EpisodeTranscript {
    /// Round traces of every turn, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.turns.iter().map(TurnTrace::to_jsonl).collect()
    }
}

/// Model handles for one episode.
pub struct EpisodeModels {
    pub agent: Box<dyn ChatModel>,
    pub user: Box<dyn ChatModel>,
    pub tool: Box<dyn ChatModel>,
}

/// Runs one episode on a copy of `seed`; `seed` itself is never touched.
pub fn run_episode(
    task: &TaskSpec,
    config: AblationConfig,
    models: &mut EpisodeModels,
    seed: &RetailDatabase,
) -> (EpisodeTranscript, GradeResult) {
    let agent = Agent::new(config);
    let mut db = seed.clone();
    let mut conv = Conversation::new(&task.task_id);
    let mut sim = UserSimulator::new(&task.task_id, &task.persona_instruction);
    let mut dialogue = vec![DialogueLine {
        speaker: "agent".into(),
        text: AGENT_GREETING.into(),
    }];
    let mut turns = Vec::new();
    let mut replies = Vec::new();
    let mut outcome = EpisodeOutcome::MaxTurns;

    for _ in 0..task.max_turns {
        let said = match simulate_user(models.user.as_mut(), &mut sim) {
            Ok(UserReply::Stop) => {
                outcome = EpisodeOutcome::Stopped;
                break;
            }
            Ok(UserReply::Message(m)) => m,
            Err(e) => {
                outcome = EpisodeOutcome::UserError(e.to_string());
                break;
            }
        };
        dialogue.push(DialogueLine {
            speaker: "user".into(),
            text: said.clone(),
        });
        let (result, trace) =
            agent.handle_turn(&mut conv, &mut db, &said, models.agent.as_mut(), models.tool.as_mut());
        turns.push(trace);
        match result {
            Ok(reply) => {
                sim.hear(&reply);
                dialogue.push(DialogueLine {
                    speaker: "agent".into(),
                    text: reply.clone(),
                });
                replies.push(reply);
            }
            Err(TurnError::Llm(LlmError::TransportError(e))) => {
                outcome = EpisodeOutcome::HarnessError(e);
                break;
            }
            Err(e) => {
                outcome = EpisodeOutcome::AgentError(e.to_string());
                break;
            }
        }
    }

    let mut grade = grade(task, seed, &db, &replies);
    match &outcome {
        EpisodeOutcome::Stopped | EpisodeOutcome::MaxTurns => {}
        EpisodeOutcome::AgentError(e) | EpisodeOutcome::UserError(e) | EpisodeOutcome::HarnessError(e) => {
            grade.error.get_or_insert_with(|| e.clone());
        }
    }
    let transcript = EpisodeTranscript {
        task_id: task.task_id.clone(),
        config,
        dialogue,
        turns,
        outcome,
        final_db_sha256: db.canonical_sha256(),
    };
    (transcript, grade)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Agent,
    User,
    Tool,
}

impl ModelRole {
    fn suffix(self) -> &'static str {
        match self {
            ModelRole::Agent => "agent",
            ModelRole::User => "user",
            ModelRole::Tool => "tool",
        }
    }
}

/// Where an episode's models come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// `<dir>/<task_id>.<agent|user|tool>.jsonl`; a missing file is an
    /// empty script.
    Script { dir: PathBuf, strict: bool },
    Live(LiveConfig),
}

impl Backend {
    pub fn open(&self, task_id: &str, role: ModelRole) -> Result<Box<dyn ChatModel>, LlmError> {
        match self {
            Backend::Script { dir, strict } => {
                let path = dir.join(format!("{task_id}.{}.jsonl", role.suffix()));
                let text = match fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
                    Err(e) => return Err(LlmError::TransportError(format!("{}: {e}", path.display()))),
                };
                let mut model = ScriptedModel::from_jsonl(&text)?;
                model.strict = *strict;
                Ok(Box::new(model))
            }
            Backend::Live(cfg) => Ok(Box::new(LiveModel::new(cfg.clone())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backends {
    pub agent: Backend,
    pub user: Backend,
    /// Serves the LLM-powered tools.
    pub tool: Backend,
}

impl Backends {
    pub fn scripted(dir: &Path) -> Self {
        let b = Backend::Script {
            dir: dir.to_path_buf(),
            strict: false,
        };
        Backends {
            agent: b.clone(),
            user: b.clone(),
            tool: b,
        }
    }

    pub fn open(&self, task_id: &str) -> Result<EpisodeModels, LlmError> {
        Ok(EpisodeModels {
            agent: self.agent.open(task_id, ModelRole::Agent)?,
            user: self.user.open(task_id, ModelRole::User)?,
            tool: self.tool.open(task_id, ModelRole::Tool)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptEntry;

    fn scripted(lines: &[(u64, u32, &str)]) -> Box<dyn ChatModel> {
        Box::new(ScriptedModel::new(lines.iter().map(|(turn, round, text)| ScriptEntry {
            episode: None,
            turn: *turn,
            round: *round,
            text: text.to_string(),
            prompt_sha256: None,
        })))
    }

    fn said(text: &str) -> String {
        format!("Relevant instructions:\nN/A\n\nUnfulfilled instructions:\nN/A\n\nResponse:\n{text}")
    }

    fn task(mutations: Vec<MutationRequest>, outputs: &[&str]) -> TaskSpec {
        TaskSpec {
            task_id: "t".into(),
            persona_instruction: "You are Noah Ito.".into(),
            expected_mutations: mutations,
            expected_outputs: outputs.iter().map(|s| s.to_string()).collect(),
            max_turns: 20,
        }
    }

    #[test]
    fn no_mutations_expected_and_none_made() {
        let seed = RetailDatabase::seed();
        let mut models = EpisodeModels {
            agent: scripted(&[(0, 1, "THOUGHT: greet\nRESPOND: The store opens at 9 AM.")]),
            user: scripted(&[(0, 1, &said("When do you open?")), (1, 1, &said(STOP))]),
            tool: scripted(&[]),
        };
        let (transcript, grade) = run_episode(&task(vec![], &["9 am"]), AblationConfig::default(), &mut models, &seed);
        assert_eq!(transcript.outcome, EpisodeOutcome::Stopped);
        assert!(grade.success(), "{grade:?}");
        assert_eq!(seed, RetailDatabase::seed());
    }

    #[test]
    fn missing_output_fails_grade() {
        let seed = RetailDatabase::seed();
        let g = grade(&task(vec![], &["1093.34"]), &seed, &seed, &["total is 1093.3".into()]);
        assert!(g.db_match);
        assert_eq!(g.outputs_found, vec![false]);
        assert!(!g.success());
        let g = grade(&task(vec![], &["Total  IS"]), &seed, &seed, &["the total\nis 5".into()]);
        assert!(g.success());
    }

    #[test]
    fn expected_mutation_not_made_fails() {
        let seed = RetailDatabase::seed();
        let cancel = MutationRequest::CancelPendingOrder {
            order_id: "#W4219264".into(),
            reason: Some("no longer needed".into()),
        };
        let t = task(vec![cancel], &[]);
        let g = grade(&t, &seed, &seed, &[]);
        assert!(!g.db_match);
        let reference = t.reference_db(&seed).unwrap();
        assert!(grade(&t, &seed, &reference, &[]).success());
    }

    #[test]
    fn user_error_is_recorded_as_failure() {
        let seed = RetailDatabase::seed();
        let mut models = EpisodeModels {
            agent: scripted(&[]),
            user: scripted(&[(0, 1, "garbage"), (0, 2, "more garbage")]),
            tool: scripted(&[]),
        };
        let (transcript, grade) = run_episode(&task(vec![], &[]), AblationConfig::default(), &mut models, &seed);
        assert!(matches!(transcript.outcome, EpisodeOutcome::UserError(_)));
        assert!(grade.db_match);
        assert!(!grade.success());
    }

    #[test]
    fn task_spec_defaults() {
        let t: TaskSpec = serde_json::from_str(r#"{"task_id": "x", "persona_instruction": "p"}"#).unwrap();
        assert_eq!(t.max_turns, 20);
        assert!(t.expected_mutations.is_empty());
    }
}
