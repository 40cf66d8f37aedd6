use std::sync::Arc;

use super::{task, EnvStateError, TaskSpec, WorldState, META_ENV_TASK};
use crate::monitor::{EnvError, Environment, StepResult};
use crate::trajectory::{Action, Trajectory};
use crate::verifier::{RuleSet, StateTracker};

/// A live session on one task.
#[derive(Debug, Clone)]
pub struct ScriptEnv {
    spec: &'static TaskSpec,
    state: WorldState,
    run_id: String,
}

impl ScriptEnv {
    pub fn new(task_name: &str) -> Result<Self, EnvStateError> {
        let spec = task(task_name)?;
        Ok(ScriptEnv {
            spec,
            state: spec.initial_state(),
            run_id: format!("run-{task_name}"),
        })
    }

    pub fn with_run_id(mut self, id: impl Into<String>) -> Self {
        self.run_id = id.into();
        self
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn spec(&self) -> &'static TaskSpec {
        self.spec
    }
}

impl Environment for ScriptEnv {
    fn blank_trajectory(&self) -> Trajectory {
        self.spec.blank_trajectory(self.run_id.clone())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let (next, observation) = self.spec.step(&self.state, action);
        self.state = next;
        Ok(StepResult {
            observation,
            terminal: self.state.terminal,
        })
    }

    fn snapshot(&self) -> Vec<u8> {
        self.state.to_blob()
    }

    fn restore(&mut self, blob: &[u8]) -> Result<(), EnvError> {
        self.state = WorldState::from_blob(blob).map_err(|e| EnvError(e.to_string()))?;
        Ok(())
    }
}

/// Replays trajectories tagged with a scriptenv task to recover their states.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptStateTracker;

impl StateTracker for ScriptStateTracker {
    fn states(&self, trajectory: &Trajectory) -> Option<Vec<Vec<u8>>> {
        let spec = task(trajectory.metadata.get(META_ENV_TASK)?).ok()?;
        let (states, _) = spec.replay(trajectory.steps.iter().map(|s| &s.action));
        Some(states.iter().map(WorldState::canonical_bytes).collect())
    }
}

/// The default rule set with scriptenv state tracking enabled.
pub fn default_rules() -> RuleSet {
    RuleSet::default().with_tracker(Arc::new(ScriptStateTracker))
}
