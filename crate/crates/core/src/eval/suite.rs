//! Repeated runs over a task set and their statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{run_episode, Backends, EpisodeOutcome, EpisodeTranscript, GradeResult, TaskSpec};
use crate::agent::AblationConfig;
use crate::retail::RetailDatabase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task_id: String,
    pub run: usize,
    pub success: bool,
    pub grade: GradeResult,
    pub outcome: EpisodeOutcome,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: AblationConfig,
    pub runs: usize,
    pub tasks: usize,
    /// Successful runs per task id.
    pub per_task_passes: BTreeMap<String, usize>,
    /// Success rate of each run, in percent.
    pub per_run_rates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of the per-run rates.
    pub stddev: f64,
    pub harness_errors: usize,
    pub episodes: Vec<EpisodeSummary>,
}

/// `mean (stddev)%` with one decimal, e.g. `77.9 (2.0)%`.
pub fn render_rate(mean: f64, stddev: f64) -> String {
    format!("{mean:.1} ({stddev:.1})%")
}

impl SuiteReport {
    pub fn render(&self) -> String {
        render_rate(self.mean, self.stddev)
    }

    pub fn from_grades(
        config: AblationConfig,
        runs: usize,
        tasks: &[TaskSpec],
        episodes: Vec<EpisodeSummary>,
    ) -> Self {
        let mut per_task_passes: BTreeMap<String, usize> =
            tasks.iter().map(|t| (t.task_id.clone(), 0)).collect();
        let mut per_run = vec![0usize; runs];
        let mut harness_errors = 0;
        for e in &episodes {
            if e.success {
                *per_task_passes.entry(e.task_id.clone()).or_default() += 1;
                per_run[e.run] += 1;
            }
            if matches!(e.outcome, EpisodeOutcome::HarnessError(_)) {
                harness_errors += 1;
            }
        }
        let per_run_rates: Vec<f64> = per_run
            .iter()
            .map(|s| if tasks.is_empty() { 0.0 } else { 100.0 * *s as f64 / tasks.len() as f64 })
            .collect();
        let n = per_run_rates.len() as f64;
        let mean = per_run_rates.iter().sum::<f64>() / n;
        let stddev = if per_run_rates.len() < 2 {
            0.0
        } else {
            (per_run_rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        SuiteReport {
            config,
            runs,
            tasks: tasks.len(),
            per_task_passes,
            per_run_rates,
            mean,
            stddev,
            harness_errors,
            episodes,
        }
    }
}

/// Runs every task `runs` times with fresh models per episode. Failures
/// are recorded per episode and never abort the suite.
pub fn run_suite(
    tasks: &[TaskSpec],
    config: AblationConfig,
    runs: usize,
    backends: &Backends,
    seed: &RetailDatabase,
) -> (SuiteReport, Vec<EpisodeTranscript>) {
    assert!(runs >= 1, "a suite needs at least one run");
    let mut summaries = Vec::new();
    let mut transcripts = Vec::new();
    for run in 0..runs {
        for task in tasks {
            let (transcript, grade) = match backends.open(&task.task_id) {
                Ok(mut models) => run_episode(task, config, &mut models, seed),
                Err(e) => {
                    let outcome = EpisodeOutcome::HarnessError(e.to_string());
                    let grade = GradeResult {
                        db_match: false,
                        outputs_found: vec![false; task.expected_outputs.len()],
                        error: Some(e.to_string()),
                    };
                    let transcript = EpisodeTranscript {
                        task_id: task.task_id.clone(),
                        config,
                        dialogue: Vec::new(),
                        turns: Vec::new(),
                        outcome,
                        final_db_sha256: seed.canonical_sha256(),
                    };
                    (transcript, grade)
                }
            };
            summaries.push(EpisodeSummary {
                task_id: task.task_id.clone(),
                run,
                success: grade.success(),
                outcome: transcript.outcome.clone(),
                turns: transcript.turns.len(),
                grade,
            });
            transcripts.push(transcript);
        }
    }
    (SuiteReport::from_grades(config, runs, tasks, summaries), transcripts)
}
