//! `smag`: run evaluation suites and single tasks, chat with the agent in
//! the terminal, and inspect recorded transcripts.

mod settings;

use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smag_core::agent::{parse_transcript, AblationConfig, Agent, Conversation, RoundTrace};
use smag_core::eval::{run_episode, run_suite, Backend, Backends, TaskSpec, AGENT_GREETING};
use smag_core::llm::{Action, ChatModel, LiveConfig, LiveModel, ScriptedModel};
use smag_core::retail::RetailDatabase;

use settings::{parse_ablation, FileSettings};

#[derive(Parser)]
#[command(name = "smag", version, about = "State-machine augmented customer service agent")]
struct Cli {
    /// TOML settings file; flags and environment variables take precedence.
    #[arg(long, global = true, env = "SMAG_SETTINGS")]
    settings: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct LlmArgs {
    /// OpenAI-compatible base URL.
    #[arg(long, env = "LLM_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "LLM_MODEL")]
    model: Option<String>,
    #[arg(long, env = "LLM_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    /// Send tools as native function definitions instead of the text grammar.
    #[arg(long)]
    native_tools: bool,
}

#[derive(Args, Clone)]
struct AgentArgs {
    /// Database JSON; the bundled seed database when omitted.
    #[arg(long, env = "SMAG_DB")]
    db: Option<PathBuf>,
    /// Ablation features, e.g. `full`, `baseline`, `full,no-acm`.
    #[arg(long, env = "SMAG_ABLATION")]
    config: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Script,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a directory several times and report success rates.
    RunSuite {
        #[arg(long, env = "SMAG_TASKS")]
        tasks: Option<PathBuf>,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long, env = "SMAG_RUNS")]
        runs: Option<usize>,
        #[arg(long, value_enum, default_value = "script")]
        agent_backend: BackendKind,
        #[arg(long, value_enum, default_value = "script")]
        user_backend: BackendKind,
        /// Script directory; defaults to `<tasks>/scripts`.
        #[arg(long)]
        scripts: Option<PathBuf>,
        /// Fail on recorded prompt hashes that differ from the live prompt.
        #[arg(long)]
        strict: bool,
        /// Where to write the report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-episode JSONL transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Run one task and print the dialogue and grade.
    RunTask {
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long, value_enum, default_value = "script")]
        agent_backend: BackendKind,
        #[arg(long, value_enum, default_value = "script")]
        user_backend: BackendKind,
        /// Script directory; defaults to `scripts/` next to the task file.
        #[arg(long)]
        scripts: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
        /// Write the round traces as JSONL.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Talk to the agent from the terminal. `:state` shows the session, `:quit` exits.
    Chat {
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long, value_enum, default_value = "live")]
        backend: BackendKind,
        /// Agent script for `--backend script`.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Script for the LLM-powered tools.
        #[arg(long)]
        tool_script: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Pretty-print a JSONL transcript.
    Inspect {
        #[arg(long)]
        transcript: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Failed(String),
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = FileSettings::load(cli.settings.as_deref())
        .map_err(CliError::Usage)
        .and_then(|file| dispatch(cli.command, &file));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command, file: &FileSettings) -> CliResult {
    match command {
        Command::RunSuite {
            tasks,
            agent,
            runs,
            agent_backend,
            user_backend,
            scripts,
            strict,
            out,
            transcripts,
            llm,
        } => {
            let tasks_dir = tasks
                .or_else(|| file.tasks.clone())
                .unwrap_or_else(|| PathBuf::from("tasks"));
            let scripts = scripts
                .or_else(|| file.scripts.clone())
                .unwrap_or_else(|| tasks_dir.join("scripts"));
            let runs = runs.or(file.runs).unwrap_or(1);
            if runs == 0 {
                return Err(CliError::Usage("--runs must be at least 1".into()));
            }
            let (db, config) = load_agent_args(&agent, file)?;
            let backends = backends(agent_backend, user_backend, &scripts, strict, &llm, file)?;
            let tasks = TaskSpec::load_dir(&tasks_dir).map_err(|e| CliError::Usage(e.to_string()))?;
            if tasks.is_empty() {
                return Err(CliError::Usage(format!("no tasks in {}", tasks_dir.display())));
            }
            let (report, episodes) = run_suite(&tasks, config, runs, &backends, &db);
            for (task, passes) in &report.per_task_passes {
                println!("{task}: {passes}/{runs}");
            }
            for e in report.episodes.iter().filter(|e| !e.success) {
                println!("run {} {}: failed ({:?})", e.run, e.task_id, e.outcome);
            }
            println!("config: {}", config.label());
            println!("success rate: {}", report.render());
            if let Some(out) = out {
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                write_file(&out, &(json + "\n"))?;
            }
            if let Some(dir) = transcripts {
                fs::create_dir_all(&dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
                for (e, t) in report.episodes.iter().zip(&episodes) {
                    write_file(&dir.join(format!("{}.run{}.jsonl", e.task_id, e.run)), &t.to_jsonl())?;
                }
            }
            if report.harness_errors > 0 {
                return Err(CliError::Failed(format!("{} harness error(s)", report.harness_errors)));
            }
            Ok(())
        }
        Command::RunTask {
            task,
            agent,
            agent_backend,
            user_backend,
            scripts,
            strict,
            transcript,
            llm,
        } => {
            let spec = TaskSpec::load(&task).map_err(|e| CliError::Usage(e.to_string()))?;
            let scripts = scripts.unwrap_or_else(|| {
                task.parent().unwrap_or_else(|| Path::new(".")).join("scripts")
            });
            let (db, config) = load_agent_args(&agent, file)?;
            let backends = backends(agent_backend, user_backend, &scripts, strict, &llm, file)?;
            let mut models = backends
                .open(&spec.task_id)
                .map_err(|e| CliError::Failed(e.to_string()))?;
            let (t, grade) = run_episode(&spec, config, &mut models, &db);
            for line in &t.dialogue {
                println!("{}: {}", line.speaker, line.text);
            }
            println!("outcome: {:?}", t.outcome);
            println!(
                "db_match: {}, outputs_found: {:?}, success: {}",
                grade.db_match,
                grade.outputs_found,
                grade.success()
            );
            if let Some(path) = transcript {
                write_file(&path, &t.to_jsonl())?;
            }
            Ok(())
        }
        Command::Chat {
            agent,
            backend,
            script,
            tool_script,
            llm,
        } => {
            let (mut db, config) = load_agent_args(&agent, file)?;
            let (mut agent_llm, mut tool_llm): (Box<dyn ChatModel>, Box<dyn ChatModel>) = match backend {
                BackendKind::Script => {
                    let script = script.ok_or_else(|| CliError::Usage("--backend script needs --script".into()))?;
                    (Box::new(load_script(&script)?), match tool_script {
                        Some(p) => Box::new(load_script(&p)?),
                        None => Box::new(ScriptedModel::default()),
                    })
                }
                BackendKind::Live => {
                    let cfg = live_config(&llm, file)?;
                    let open = |c: LiveConfig| LiveModel::new(c).map_err(|e| CliError::Failed(e.to_string()));
                    (Box::new(open(cfg.clone())?), Box::new(open(cfg)?))
                }
            };
            chat(config, &mut db, agent_llm.as_mut(), tool_llm.as_mut())
        }
        Command::Inspect { transcript } => {
            let text = fs::read_to_string(&transcript)
                .map_err(|e| CliError::Usage(format!("{}: {e}", transcript.display())))?;
            let rounds = parse_transcript(&text).map_err(|e| CliError::Failed(e.to_string()))?;
            print!("{}", render_rounds(&rounds));
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn load_script(path: &Path) -> Result<ScriptedModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    ScriptedModel::from_jsonl(&text).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_agent_args(args: &AgentArgs, file: &FileSettings) -> Result<(RetailDatabase, AblationConfig), CliError> {
    let db = match args.db.clone().or_else(|| file.db.clone()) {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!("database {} does not exist", path.display())));
            }
            RetailDatabase::load(&path).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => RetailDatabase::seed(),
    };
    let spec = args.config.clone().or_else(|| file.ablation.clone()).unwrap_or_default();
    let config = parse_ablation(&spec).map_err(CliError::Usage)?;
    Ok((db, config))
}

fn live_config(llm: &LlmArgs, file: &FileSettings) -> Result<LiveConfig, CliError> {
    let endpoint = llm
        .endpoint
        .clone()
        .or_else(|| file.llm.endpoint.clone())
        .ok_or_else(|| CliError::Usage("live backend needs --endpoint or LLM_ENDPOINT".into()))?;
    let model = llm
        .model
        .clone()
        .or_else(|| file.llm.model.clone())
        .unwrap_or_else(|| "gpt-4o".into());
    let mut cfg = LiveConfig::new(&endpoint, &model);
    cfg.api_key = llm.api_key.clone().or_else(|| file.llm.api_key.clone());
    cfg.native_tools = llm.native_tools || file.llm.native_tools.unwrap_or(false);
    Ok(cfg)
}

fn backends(
    agent: BackendKind,
    user: BackendKind,
    scripts: &Path,
    strict: bool,
    llm: &LlmArgs,
    file: &FileSettings,
) -> Result<Backends, CliError> {
    let needs_live = agent == BackendKind::Live || user == BackendKind::Live;
    let live = if needs_live { Some(live_config(llm, file)?) } else { None };
    let pick = |kind: BackendKind| match kind {
        BackendKind::Script => Backend::Script {
            dir: scripts.to_path_buf(),
            strict,
        },
        BackendKind::Live => Backend::Live(live.clone().expect("live config resolved")),
    };
    if needs_live || scripts.is_dir() {
        Ok(Backends {
            agent: pick(agent),
            user: pick(user),
            tool: pick(agent),
        })
    } else {
        Err(CliError::Usage(format!("script directory {} does not exist", scripts.display())))
    }
}

fn render_state(agent: &Agent, conv: &Conversation) -> String {
    let flows = agent.engine.render_flow_infos(&conv.session);
    let mut s = match &conv.session.authenticated_user_id {
        Some(user) => format!("authenticated as {user}, {} flows", flows.len()),
        None => format!("unauthenticated, {} flows", flows.len()),
    };
    for f in flows {
        s.push('\n');
        s.push_str(&f.render());
    }
    s
}

fn chat(
    config: AblationConfig,
    db: &mut RetailDatabase,
    agent_llm: &mut dyn ChatModel,
    tool_llm: &mut dyn ChatModel,
) -> CliResult {
    let agent = Agent::new(config);
    let mut conv = Conversation::new("chat");
    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    let mut out = io::stdout();
    let fail = |e: io::Error| CliError::Failed(e.to_string());
    writeln!(out, "agent: {AGENT_GREETING}").map_err(fail)?;
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            write!(out, "> ").map_err(fail)?;
            out.flush().map_err(fail)?;
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(fail)?;
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" => break,
            ":state" => writeln!(out, "{}", render_state(&agent, &conv)).map_err(fail)?,
            said => {
                let (result, _) = agent.handle_turn(&mut conv, db, said, agent_llm, tool_llm);
                match result {
                    Ok(reply) => writeln!(out, "agent: {reply}").map_err(fail)?,
                    Err(e) => writeln!(out, "error: {e}").map_err(fail)?,
                }
            }
        }
    }
    Ok(())
}

fn render_rounds(rounds: &[RoundTrace]) -> String {
    let mut s = String::new();
    let mut turns = Vec::new();
    for r in rounds {
        if turns.last() != Some(&(r.episode.clone(), r.turn)) {
            turns.push((r.episode.clone(), r.turn));
        }
        let hash = r.prompt_sha256.get(..12).unwrap_or(&r.prompt_sha256);
        s.push_str(&format!("turn {} round {} (prompt {hash})\n", r.turn, r.round));
        if let Some(err) = &r.parse_error {
            s.push_str(&format!("  parse error: {err}\n"));
        }
        if let Some(d) = &r.decision {
            if !d.thought.is_empty() {
                s.push_str(&format!("  thought: {}\n", d.thought.replace('\n', " ")));
            }
            if let Action::Respond { message } = &d.action {
                s.push_str(&format!("  respond: {message}\n"));
            }
        }
        for c in &r.tool_calls {
            s.push_str(&format!(
                "  call {} {}\n",
                c.call.name,
                serde_json::Value::Object(c.call.arguments.clone())
            ));
            let mut lines = c.result.lines();
            let first = lines.next().unwrap_or("");
            let more = lines.count();
            if more > 0 {
                s.push_str(&format!("    -> {first} (+{more} lines)\n"));
            } else {
                s.push_str(&format!("    -> {first}\n"));
            }
        }
        if r.revision_after != r.revision_before {
            s.push_str(&format!("  db revision {} -> {}\n", r.revision_before, r.revision_after));
        }
    }
    s.push_str(&format!("{} rounds in {} turns\n", rounds.len(), turns.len()));
    s
}
