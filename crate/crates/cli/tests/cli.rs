//! Command-level tests against the built `smag` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn smag() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smag"));
    c.current_dir(root());
    for var in ["SMAG_SETTINGS", "SMAG_DB", "SMAG_TASKS", "SMAG_RUNS", "SMAG_ABLATION", "LLM_ENDPOINT", "LLM_MODEL", "LLM_API_KEY"] {
        c.env_remove(var);
    }
    c
}

fn run_with_stdin(mut cmd: Command, input: &str) -> Output {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn scripted_suite_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = smag()
        .args(["run-suite", "--tasks", "tasks", "--runs", "5", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("success rate: 91.7 (0.0)%"));
    let r = report(&out);
    assert_eq!(r["per_run_rates"].as_array().unwrap().len(), 5);
    assert_eq!(r["tasks"], 12);
    assert_eq!(r["harness_errors"], 0);
}

#[test]
fn demo_suite_without_user_error_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("tasks");
    fs::create_dir_all(tasks.join("scripts")).unwrap();
    for entry in fs::read_dir(root().join("tasks")).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if p.is_file() && !name.starts_with("t11") {
            fs::copy(&p, tasks.join(&name)).unwrap();
        }
    }
    for entry in fs::read_dir(root().join("tasks/scripts")).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, tasks.join("scripts").join(p.file_name().unwrap())).unwrap();
    }
    let out = dir.path().join("r.json");
    let o = smag().arg("run-suite").arg("--tasks").arg(&tasks).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&out)["mean"], 100.0);
}

#[test]
fn missing_db_is_a_usage_error() {
    let o = smag().args(["run-suite", "--db", "no/such/db.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = smag().args(["chat", "--db", "no/such/db.json", "--backend", "script", "--script", "x"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_beat_env_beat_settings_file() {
    let dir = tempfile::tempdir().unwrap();
    let settings = dir.path().join("smag.toml");
    fs::write(&settings, "db = \"missing-from-file.json\"\n").unwrap();
    let base = || {
        let mut c = smag();
        c.args(["run-task", "--task", "tasks/t10_order_status.json"]).env("SMAG_SETTINGS", &settings);
        c
    };
    assert_eq!(base().output().unwrap().status.code(), Some(2));
    let o = base().env("SMAG_DB", "data/retail_db.json").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = base()
        .env("SMAG_DB", "missing-from-env.json")
        .args(["--db", "data/retail_db.json"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("success: true"));
}

#[test]
fn chat_state_and_quit() {
    let mut c = smag();
    c.args(["chat", "--backend", "script", "--script", "tasks/scripts/t10_order_status.agent.jsonl"]);
    let o = run_with_stdin(c, ":state\n:quit\n");
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines[1], "unauthenticated, 0 flows");
    assert_eq!(lines.len(), 2);
}

#[test]
fn chat_cancel_dialog_matches_golden() {
    let mut c = smag();
    c.args(["chat", "--backend", "script", "--script", "tasks/scripts/t02_cancel_reason_when_asked.agent.jsonl"]);
    let input = fs::read_to_string(golden("chat_cancel.in")).unwrap();
    let o = run_with_stdin(c, &input);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), fs::read_to_string(golden("chat_cancel.out")).unwrap());
}

#[test]
fn inspect_walkthrough_matches_golden() {
    let o = smag().arg("inspect").arg("--transcript").arg(golden("walkthrough.jsonl")).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text, fs::read_to_string(golden("inspect_walkthrough.out")).unwrap());
    let turn2 = text.lines().filter(|l| l.starts_with("turn 2 round")).count();
    assert_eq!(turn2, 3);
    let lines: Vec<&str> = text.lines().collect();
    for (i, l) in lines.iter().enumerate() {
        if l.contains("db revision") {
            assert!(lines[..i].last().is_some_and(|prev| prev.contains("CONFIRMED")), "{l}");
        }
    }
}

#[test]
fn inspect_rejects_empty_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = smag().arg("inspect").arg("--transcript").arg(&empty).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed transcript"));
}

#[test]
fn run_task_is_deterministic() {
    let run = || {
        smag()
            .args(["run-task", "--task", "tasks/t01_upgrade_all_items.json"])
            .output()
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("success: true"));
}
