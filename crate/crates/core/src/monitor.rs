//! Check-and-act runtime monitoring. The agent acts step by step; every `k` steps the whole
//! trajectory so far is audited. On an anomaly at step `l` the environment is restored to
//! the checkpoint taken before step `l`, the trajectory is cut back to `l - 1` steps and the
//! agent is told why before it retries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::trajectory::{Action, Step, Trajectory};
use crate::verifier::{DiagnosticReport, Verifier, VerifierError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct EnvError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub observation: String,
    pub terminal: bool,
}

/// A checkpointable environment.
pub trait Environment {
    /// An empty trajectory carrying this environment's id, instruction, tools and domain.
    fn blank_trajectory(&self) -> Trajectory;
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;
    fn snapshot(&self) -> Vec<u8>;
    fn restore(&mut self, blob: &[u8]) -> Result<(), EnvError>;
}

/// Told to the agent after a rollback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionNote {
    pub step: usize,
    pub content: Option<String>,
}

pub struct AgentContext<'a> {
    pub instruction: &'a str,
    pub history: &'a [Step],
    pub rejections: &'a [RejectionNote],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTurn {
    pub thought: String,
    pub action: Action,
}

pub trait AgentPolicy {
    fn act(&mut self, ctx: &AgentContext<'_>) -> AgentTurn;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub check_interval: usize,
    pub retry_budget: usize,
    pub max_steps: usize,
    pub tau: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            check_interval: 1,
            retry_budget: 3,
            max_steps: 200,
            tau: crate::metrics::DEFAULT_TAU,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.check_interval == 0 {
            return Err(MonitorError::Config("check_interval must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(MonitorError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step_index: usize,
    #[serde(with = "hex_blob")]
    pub state_blob: Vec<u8>,
}

mod hex_blob {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    #[serde(rename = "completed")]
    Completed,
    #[serde(rename = "aborted.retry_exhausted")]
    RetryExhausted,
    #[serde(rename = "aborted.step_budget")]
    StepBudget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackEvent {
    pub detected_at_step: usize,
    pub rolled_back_to: usize,
    pub verifier_report: DiagnosticReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub final_trajectory: Trajectory,
    /// Every executed environment step, discarded ones included.
    pub env_steps_executed: usize,
    pub rollbacks: Vec<RollbackEvent>,
    pub steps_saved_vs_restart: usize,
    /// Anomaly reports naming a step outside the current trajectory.
    pub ignored_reports: Vec<DiagnosticReport>,
}

impl RunOutcome {
    /// One line per rollback followed by a summary line.
    pub fn to_report_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.rollbacks {
            let line = serde_json::json!({"event": "rollback", "rollback": event});
            let _ = writeln!(out, "{line}");
        }
        let summary = serde_json::json!({
            "event": "summary",
            "status": self.status,
            "env_steps_executed": self.env_steps_executed,
            "rollback_count": self.rollbacks.len(),
            "steps_saved_vs_restart": self.steps_saved_vs_restart,
            "ignored_reports": self.ignored_reports.len(),
            "final_length": self.final_trajectory.len(),
            "final_trajectory": self.final_trajectory,
        });
        let _ = writeln!(out, "{summary}");
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("environment error: {source}")]
    Env {
        source: EnvError,
        partial: Box<RunOutcome>,
    },
    #[error("verifier error: {source}")]
    Verifier {
        source: VerifierError,
        partial: Box<RunOutcome>,
    },
    #[error("no checkpoint for step index {step_index}")]
    MissingCheckpoint { step_index: usize },
    #[error("invalid monitor configuration: {0}")]
    Config(String),
}

pub fn should_check(step_count: usize, k: usize) -> bool {
    step_count > 0 && step_count.is_multiple_of(k)
}

/// Restores the checkpoint taken before step `l` and drops every later checkpoint.
pub fn rollback<E: Environment + ?Sized>(
    env: &mut E,
    checkpoints: &mut Vec<Checkpoint>,
    l: usize,
) -> Result<(), MonitorError> {
    let target = l.saturating_sub(1);
    let missing = MonitorError::MissingCheckpoint { step_index: target };
    if l == 0 {
        return Err(missing);
    }
    let position = checkpoints
        .iter()
        .position(|c| c.step_index == target)
        .ok_or(missing)?;
    env.restore(&checkpoints[position].state_blob)
        .map_err(|_| MonitorError::MissingCheckpoint { step_index: target })?;
    checkpoints.truncate(position + 1);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Recovery {
    Rollback,
    Restart,
}

struct Session {
    trajectory: Trajectory,
    checkpoints: Vec<Checkpoint>,
    rejections: Vec<RejectionNote>,
    retries: BTreeMap<usize, usize>,
    rollbacks: Vec<RollbackEvent>,
    ignored: Vec<DiagnosticReport>,
    env_steps: usize,
}

impl Session {
    fn outcome(self, status: RunStatus) -> RunOutcome {
        let saved = self.rollbacks.iter().map(|r| r.rolled_back_to).sum();
        RunOutcome {
            status,
            final_trajectory: self.trajectory,
            env_steps_executed: self.env_steps,
            rollbacks: self.rollbacks,
            steps_saved_vs_restart: saved,
            ignored_reports: self.ignored,
        }
    }
}

fn run<A, E, V, O>(
    agent: &mut A,
    env: &mut E,
    verifier: Option<&V>,
    config: &MonitorConfig,
    recovery: Recovery,
    observer: &mut O,
) -> Result<RunOutcome, MonitorError>
where
    A: AgentPolicy + ?Sized,
    E: Environment + ?Sized,
    V: Verifier + ?Sized,
    O: FnMut(&RollbackEvent, &Trajectory, &E),
{
    config.validate()?;
    let mut s = Session {
        trajectory: env.blank_trajectory(),
        checkpoints: Vec::new(),
        rejections: Vec::new(),
        retries: BTreeMap::new(),
        rollbacks: Vec::new(),
        ignored: Vec::new(),
        env_steps: 0,
    };
    loop {
        if s.env_steps >= config.max_steps {
            return Ok(s.outcome(RunStatus::StepBudget));
        }
        let n = s.trajectory.len();
        if s.checkpoints.last().is_none_or(|c| c.step_index < n) {
            s.checkpoints.push(Checkpoint {
                step_index: n,
                state_blob: env.snapshot(),
            });
        }
        let turn = agent.act(&AgentContext {
            instruction: &s.trajectory.instruction,
            history: &s.trajectory.steps,
            rejections: &s.rejections,
        });
        let result = match env.step(&turn.action) {
            Ok(r) => r,
            Err(source) => {
                return Err(MonitorError::Env {
                    source,
                    partial: Box::new(s.outcome(RunStatus::StepBudget)),
                })
            }
        };
        s.env_steps += 1;
        s.trajectory
            .steps
            .push(Step::new(n + 1, turn.thought, turn.action, result.observation));

        if let Some(verifier) = verifier.filter(|_| should_check(n + 1, config.check_interval)) {
            let report = match verifier.verify(&s.trajectory) {
                Ok(r) => r,
                Err(source) => {
                    return Err(MonitorError::Verifier {
                        source,
                        partial: Box::new(s.outcome(RunStatus::StepBudget)),
                    })
                }
            };
            if report.is_anomaly() {
                match report.error_step {
                    Some(l) if (1..=s.trajectory.len()).contains(&l) => {
                        let used = s.retries.entry(l).or_insert(0);
                        if *used >= config.retry_budget {
                            return Ok(s.outcome(RunStatus::RetryExhausted));
                        }
                        *used += 1;
                        let target = match recovery {
                            Recovery::Rollback => l,
                            Recovery::Restart => 1,
                        };
                        rollback(env, &mut s.checkpoints, target)?;
                        s.trajectory.steps.truncate(target - 1);
                        s.rejections.push(RejectionNote {
                            step: l,
                            content: report.error_content.clone(),
                        });
                        let event = RollbackEvent {
                            detected_at_step: l,
                            rolled_back_to: target - 1,
                            verifier_report: report,
                        };
                        observer(&event, &s.trajectory, env);
                        s.rollbacks.push(event);
                        continue;
                    }
                    _ => {
                        tracing::warn!(
                            step = ?report.error_step,
                            n = s.trajectory.len(),
                            "ignoring anomaly report outside the trajectory"
                        );
                        s.ignored.push(report);
                    }
                }
            }
        }
        if result.terminal {
            return Ok(s.outcome(RunStatus::Completed));
        }
    }
}

pub fn run_with_monitor<A, E, V>(
    agent: &mut A,
    env: &mut E,
    verifier: &V,
    config: &MonitorConfig,
) -> Result<RunOutcome, MonitorError>
where
    A: AgentPolicy + ?Sized,
    E: Environment + ?Sized,
    V: Verifier + ?Sized,
{
    run(agent, env, Some(verifier), config, Recovery::Rollback, &mut |_, _, _| {})
}

/// As [`run_with_monitor`], calling `observer` right after each rollback with the event, the
/// retained trajectory and the restored environment.
pub fn run_with_monitor_observed<A, E, V, O>(
    agent: &mut A,
    env: &mut E,
    verifier: &V,
    config: &MonitorConfig,
    mut observer: O,
) -> Result<RunOutcome, MonitorError>
where
    A: AgentPolicy + ?Sized,
    E: Environment + ?Sized,
    V: Verifier + ?Sized,
    O: FnMut(&RollbackEvent, &Trajectory, &E),
{
    run(agent, env, Some(verifier), config, Recovery::Rollback, &mut observer)
}

/// The agent alone, no audits.
pub fn run_unmonitored<A, E>(
    agent: &mut A,
    env: &mut E,
    max_steps: usize,
) -> Result<RunOutcome, MonitorError>
where
    A: AgentPolicy + ?Sized,
    E: Environment + ?Sized,
{
    let config = MonitorConfig {
        max_steps,
        ..MonitorConfig::default()
    };
    run::<A, E, dyn Verifier, _>(agent, env, None, &config, Recovery::Rollback, &mut |_, _, _| {})
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestartComparison {
    pub monitored: RunOutcome,
    pub restart_baseline: RunOutcome,
}

impl RestartComparison {
    /// Environment steps the baseline spent beyond the monitored run.
    pub fn extra_baseline_steps(&self) -> i64 {
        self.restart_baseline.env_steps_executed as i64 - self.monitored.env_steps_executed as i64
    }
}

/// Runs the same scenario twice: once rolling back to `l - 1`, once restarting from the
/// initial state on every detection. `make_agent` and `make_env` must build identical
/// starting points.
pub fn compare_with_restart<A, E, V>(
    mut make_agent: impl FnMut() -> A,
    mut make_env: impl FnMut() -> E,
    verifier: &V,
    config: &MonitorConfig,
) -> Result<RestartComparison, MonitorError>
where
    A: AgentPolicy,
    E: Environment,
    V: Verifier + ?Sized,
{
    let noop = &mut |_: &RollbackEvent, _: &Trajectory, _: &E| {};
    let monitored = run(
        &mut make_agent(),
        &mut make_env(),
        Some(verifier),
        config,
        Recovery::Rollback,
        noop,
    )?;
    let restart_baseline = run(
        &mut make_agent(),
        &mut make_env(),
        Some(verifier),
        config,
        Recovery::Restart,
        noop,
    )?;
    Ok(RestartComparison {
        monitored,
        restart_baseline,
    })
}
