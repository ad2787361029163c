//! Scripted replay of the shipped desk task set.

use std::path::PathBuf;

use smag_core::agent::AblationConfig;
use smag_core::eval::{run_suite, Backends, EpisodeOutcome, TaskSpec};
use smag_core::retail::RetailDatabase;

fn tasks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tasks")
}

#[test]
fn desk_suite_replays_as_recorded() {
    let dir = tasks_dir();
    let tasks = TaskSpec::load_dir(&dir).unwrap();
    assert_eq!(tasks.len(), 12);
    let seed = RetailDatabase::seed();
    let (report, transcripts) = run_suite(
        &tasks,
        AblationConfig::default(),
        1,
        &Backends::scripted(&dir.join("scripts")),
        &seed,
    );
    for (e, t) in report.episodes.iter().zip(&transcripts) {
        let expect_success = e.task_id != "t11_user_error_payment";
        assert_eq!(
            e.success, expect_success,
            "{}: {:?} {:?}\n{}",
            e.task_id,
            e.outcome,
            e.grade,
            t.to_jsonl()
        );
        assert_eq!(e.outcome, EpisodeOutcome::Stopped, "{}", e.task_id);
    }
    assert_eq!(report.harness_errors, 0);
    assert_eq!(report.render(), "91.7 (0.0)%");
    assert_eq!(seed, RetailDatabase::seed());
}

#[test]
fn every_task_reference_applies_to_the_seed() {
    let seed = RetailDatabase::seed();
    for task in TaskSpec::load_dir(&tasks_dir()).unwrap() {
        let reference = task.reference_db(&seed).unwrap();
        assert_eq!(reference.revision, seed.revision + task.expected_mutations.len() as u64);
        reference.check_integrity().unwrap();
    }
}
