//! Checks shared by the monitor tests and the acceptance runner. Each returns a
//! description of the first violation.

use trajaudit::monitor::{
    compare_with_restart, run_unmonitored, run_with_monitor, run_with_monitor_observed,
    Environment, MonitorConfig, RunStatus,
};
use trajaudit::scriptenv::fixtures::{faucet_loop_fixture, faucet_loop_spec, load_faucet_loop, monitor_suite, FAUCET_LOOP_TASK};
use trajaudit::scriptenv::{default_rules, task, task_names, OnRejection, ScriptEnv, ScriptedAgent, ScriptedAgentSpec};
use trajaudit::verifier::{rule_verify, DiagnosticReport, OracleVerifier};
use trajaudit::{Trajectory, Verdict};

fn always_normal(_: &Trajectory) -> DiagnosticReport {
    DiagnosticReport::normal("")
}

/// An always-Normal verifier leaves every run exactly as the unmonitored one.
pub fn transparency() -> Result<usize, String> {
    let mut specs: Vec<(String, &str, ScriptedAgentSpec)> = task_names()
        .into_iter()
        .map(|n| (n.to_string(), n, ScriptedAgentSpec::for_task(n).unwrap()))
        .collect();
    specs.extend(
        monitor_suite(OnRejection::SkipFaultyAction)
            .into_iter()
            .map(|s| (s.name, s.task, s.agent)),
    );
    for (name, task_name, spec) in &specs {
        for k in [1, 2, 3, 5] {
            let config = MonitorConfig {
                check_interval: k,
                ..MonitorConfig::default()
            };
            let mut agent = ScriptedAgent::new(spec).unwrap();
            let mut env = ScriptEnv::new(task_name).unwrap();
            let monitored = run_with_monitor(&mut agent, &mut env, &always_normal, &config)
                .map_err(|e| format!("{name}: {e}"))?;
            let mut agent = ScriptedAgent::new(spec).unwrap();
            let mut env2 = ScriptEnv::new(task_name).unwrap();
            let plain = run_unmonitored(&mut agent, &mut env2, config.max_steps)
                .map_err(|e| format!("{name}: {e}"))?;
            if monitored.final_trajectory != plain.final_trajectory
                || monitored.env_steps_executed != plain.env_steps_executed
                || monitored.status != plain.status
                || !monitored.rollbacks.is_empty()
                || env.state() != env2.state()
            {
                return Err(format!("{name} k={k}: monitored run differs from unmonitored"));
            }
        }
    }
    Ok(specs.len())
}

/// After each rollback the environment equals a fresh replay of the kept steps.
pub fn replay_equivalence() -> Result<usize, String> {
    let mut checked = 0;
    for on_rejection in [OnRejection::SkipFaultyAction, OnRejection::ReplayGolden] {
        for scenario in monitor_suite(on_rejection) {
            let verifier = OracleVerifier::new([scenario.labeled.clone()]);
            let spec = task(scenario.task).unwrap();
            let mut failure = None;
            let mut agent = ScriptedAgent::new(&scenario.agent).unwrap();
            let mut env = ScriptEnv::new(scenario.task).unwrap();
            let outcome = run_with_monitor_observed(
                &mut agent,
                &mut env,
                &verifier,
                &MonitorConfig::default(),
                |event, kept, env: &ScriptEnv| {
                    let (states, observations) = spec.replay(kept.steps.iter().map(|s| &s.action));
                    let recorded: Vec<&str> = kept.steps.iter().map(|s| s.observation.as_str()).collect();
                    if kept.len() != event.rolled_back_to
                        || states.last() != Some(env.state())
                        || recorded != observations.iter().map(String::as_str).collect::<Vec<_>>()
                    {
                        failure.get_or_insert(format!(
                            "{}: state after rollback to {} is not the replayed state",
                            scenario.name, event.rolled_back_to
                        ));
                    }
                    checked += 1;
                },
            )
            .map_err(|e| format!("{}: {e}", scenario.name))?;
            if let Some(f) = failure {
                return Err(f);
            }
            if outcome.status != RunStatus::Completed || !env.state().completed_goal {
                return Err(format!("{}: {:?} after recovery", scenario.name, outcome.status));
            }
            if outcome.rollbacks.is_empty() {
                return Err(format!("{}: the injected fault was never caught", scenario.name));
            }
        }
    }
    Ok(checked)
}

/// An agent that never changes its plan is stopped after the retry budget.
pub fn retry_exhaustion() -> Result<usize, String> {
    let suite = monitor_suite(OnRejection::Persist);
    for scenario in &suite {
        for budget in [0, 1, 2, 3] {
            let config = MonitorConfig {
                retry_budget: budget,
                ..MonitorConfig::default()
            };
            let verifier = OracleVerifier::new([scenario.labeled.clone()]);
            let mut agent = ScriptedAgent::new(&scenario.agent).unwrap();
            let mut env = ScriptEnv::new(scenario.task).unwrap();
            let outcome = run_with_monitor(&mut agent, &mut env, &verifier, &config)
                .map_err(|e| format!("{}: {e}", scenario.name))?;
            let l = scenario.labeled.label.first_error_step.unwrap();
            if outcome.status != RunStatus::RetryExhausted
                || outcome.rollbacks.len() != budget
                || outcome.env_steps_executed != l + budget
            {
                return Err(format!(
                    "{} budget {budget}: {:?} with {} rollbacks and {} steps",
                    scenario.name,
                    outcome.status,
                    outcome.rollbacks.len(),
                    outcome.env_steps_executed
                ));
            }
        }
    }
    Ok(suite.len())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaucetLoopNumbers {
    pub fixture_len: usize,
    pub label_step: usize,
    pub rule_step: Option<usize>,
    pub rollbacks: Vec<(usize, usize)>,
    pub monitored_steps: usize,
    pub baseline_steps: usize,
    pub extra_baseline_steps: i64,
    pub completed: bool,
}

pub fn faucet_loop() -> Result<FaucetLoopNumbers, String> {
    let fixture = load_faucet_loop().map_err(|e| e.to_string())?;
    if fixture != faucet_loop_fixture() {
        return Err("committed fixture is stale".into());
    }
    let rule = rule_verify(&fixture.trajectory, &default_rules());
    let agent_spec = ScriptedAgentSpec::for_task(FAUCET_LOOP_TASK)
        .unwrap()
        .with_injection(faucet_loop_spec(), OnRejection::ReplayGolden);
    let verifier = OracleVerifier::new([fixture.clone()]);
    let config = MonitorConfig::default();
    let cmp = compare_with_restart(
        || ScriptedAgent::new(&agent_spec).unwrap(),
        || ScriptEnv::new(FAUCET_LOOP_TASK).unwrap(),
        &verifier,
        &config,
    )
    .map_err(|e| e.to_string())?;
    let golden = trajaudit::scriptenv::golden_run(FAUCET_LOOP_TASK).unwrap();
    let same_as_golden = |t: &Trajectory| {
        t.steps.len() == golden.steps.len()
            && t.steps.iter().zip(&golden.steps).all(|(a, b)| {
                a.action == b.action && a.observation == b.observation
            })
    };
    let m = &cmp.monitored;
    Ok(FaucetLoopNumbers {
        fixture_len: fixture.trajectory.len(),
        label_step: fixture.label.first_error_step.unwrap_or(0),
        rule_step: (rule.verdict == Verdict::Anomaly).then_some(rule.error_step).flatten(),
        rollbacks: m.rollbacks.iter().map(|r| (r.detected_at_step, r.rolled_back_to)).collect(),
        monitored_steps: m.env_steps_executed,
        baseline_steps: cmp.restart_baseline.env_steps_executed,
        extra_baseline_steps: cmp.extra_baseline_steps(),
        completed: m.status == RunStatus::Completed
            && cmp.restart_baseline.status == RunStatus::Completed
            && same_as_golden(&m.final_trajectory),
    })
}

/// Convenience for environments other than `ScriptEnv`.
pub fn snapshot_round_trips<E: Environment>(env: &mut E) -> bool {
    let blob = env.snapshot();
    env.restore(&blob).is_ok() && env.snapshot() == blob
}
