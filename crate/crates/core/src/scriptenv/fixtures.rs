//! Labeled scriptenv scenarios: the redundant-cleaning fixture and a suite of injected
//! faults the scripted agent can act out.

use std::path::PathBuf;

use super::{golden_run, task, task_names, OnRejection, ScriptEnvGenerator, ScriptEnvPerturber, ScriptedAgentSpec};
use crate::rng::unit_rng;
use crate::synth::{
    annotate, complete_trajectory, default_error_content, inject_perturbation, InsertionPattern,
    Payload, PerturbationSpec, Perturber, RefusalDetector, ScriptedGenerator, StepDraft,
};
use crate::trajectory::{read_jsonl, AnomalyType, LabeledTrajectory, ParseError};

pub const FIXTURE_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/v1");
pub const FAUCET_LOOP_FILE: &str = "faucet_loop.jsonl";
pub const FAUCET_LOOP_ERROR_CONTENT: &str = "Redundant Cleaning";
pub const FAUCET_LOOP_TASK: &str = "clean-plate";

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(FIXTURE_DIR).join(name)
}

/// Two more faucet toggles right after the plate has been cleaned at step 7.
pub fn faucet_loop_spec() -> PerturbationSpec {
    let spec = task(FAUCET_LOOP_TASK).expect("bundled task");
    let gold = golden_run(FAUCET_LOOP_TASK).expect("bundled task");
    let (states, _) = spec.replay(gold.steps[..7].iter().map(|s| &s.action));
    let toggle = |thought: &str| {
        let draft = StepDraft::new(thought, "ToggleObject(Faucet)", "");
        let (_, observation) = spec.step(&states[7], &draft.action);
        StepDraft { observation, ..draft }
    };
    PerturbationSpec::new(
        7,
        Payload::II {
            inserted_steps: vec![
                toggle("Let me make sure the plate is really clean."),
                toggle("Run the water once more to be safe."),
            ],
            pattern: InsertionPattern::Loop,
        },
    )
}

/// Builds the fixture from scratch; the committed file must equal this.
pub fn faucet_loop_fixture() -> LabeledTrajectory {
    let gold = golden_run(FAUCET_LOOP_TASK).expect("bundled task");
    let spec = faucet_loop_spec();
    let prefix = inject_perturbation(&gold, &spec).expect("valid spec");
    let completed = complete_trajectory(
        &prefix,
        &ScriptedGenerator::golden_suffix(),
        &RefusalDetector::default(),
        &mut unit_rng(0, "faucet-loop"),
    )
    .expect("scripted generator");
    annotate(completed, &spec, FAUCET_LOOP_ERROR_CONTENT)
}

pub fn load_faucet_loop() -> Result<LabeledTrajectory, ParseError> {
    read_jsonl(fixture_path(FAUCET_LOOP_FILE))?
        .into_iter()
        .next()
        .ok_or_else(|| ParseError::Schema {
            id: None,
            field: "<file>".into(),
            message: format!("{FAUCET_LOOP_FILE} is empty"),
        })
}

/// An injected fault, the agent that commits it and the resulting labeled trajectory.
#[derive(Debug, Clone)]
pub struct MonitorScenario {
    pub name: String,
    pub task: &'static str,
    pub agent: ScriptedAgentSpec,
    pub labeled: LabeledTrajectory,
}

/// Every I.a, I.b and II fault the environment perturber can place at steps 2..n-1 of
/// each bundled task.
pub fn monitor_suite(on_rejection: OnRejection) -> Vec<MonitorScenario> {
    let mut out = Vec::new();
    for name in task_names() {
        let gold = golden_run(name).expect("bundled task");
        for t in 2..gold.len() {
            for ty in [
                AnomalyType::ReasoningError,
                AnomalyType::ExecutionError,
                AnomalyType::Inefficiency,
            ] {
                let key = format!("{name}/{ty}@{t}");
                let mut rng = unit_rng(7, &key);
                let Ok(spec) = ScriptEnvPerturber.spec(&gold, ty, t, &mut rng) else {
                    continue;
                };
                let prefix = inject_perturbation(&gold, &spec).expect("perturber output is valid");
                let completed =
                    complete_trajectory(&prefix, &ScriptEnvGenerator, &RefusalDetector::default(), &mut rng)
                        .expect("environment generator");
                let content = default_error_content(&spec);
                out.push(MonitorScenario {
                    name: key,
                    task: name,
                    agent: ScriptedAgentSpec::for_task(name)
                        .expect("bundled task")
                        .with_injection(spec.clone(), on_rejection),
                    labeled: annotate(completed, &spec, content),
                });
            }
        }
    }
    out
}
