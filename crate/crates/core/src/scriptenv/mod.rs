//! A deterministic, checkpointable household environment. Tasks are data files: a place
//! graph, objects with boolean attributes, toggle effects, a goal and a golden script.
//! Invalid actions never fail; they leave the state alone and answer with an observation
//! starting `Error:`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::monitor::Checkpoint;
use crate::trajectory::{Action, Domain, Step, ToolDescriptor, Trajectory};

mod agent;
mod env;
pub mod fixtures;
mod perturber;

pub use agent::{OnRejection, PlannedStep, ScriptedAgent, ScriptedAgentError, ScriptedAgentSpec};
pub use env::{default_rules, ScriptEnv, ScriptStateTracker};
pub use perturber::{ScriptEnvGenerator, ScriptEnvPerturber};

/// Location of an object being carried.
pub const HELD: &str = "Agent";
/// Metadata key naming the scriptenv task a trajectory was produced in.
pub const META_ENV_TASK: &str = "env_task";
const OPEN: &str = "Open";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    pub location: String,
    pub attributes: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent_location: String,
    pub object_states: BTreeMap<String, ObjectState>,
    pub terminal: bool,
    pub completed_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvStateError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("corrupt checkpoint blob: {0}")]
    CorruptBlob(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectSpec {
    location: String,
    portable: bool,
    attributes: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToggleSpec {
    place: String,
    sets: String,
    requires_closed: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalSpec {
    locations: BTreeMap<String, String>,
    attributes: Vec<(String, String, bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub thought: String,
    pub action: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub instruction: String,
    start: String,
    adjacency: Vec<(String, String)>,
    objects: BTreeMap<String, ObjectSpec>,
    toggles: BTreeMap<String, ToggleSpec>,
    goal: GoalSpec,
    pub script: Vec<ScriptStep>,
}

const TASK_SOURCES: [&str; 3] = [
    include_str!("../../tasks/clean-plate.json"),
    include_str!("../../tasks/heat-mug.json"),
    include_str!("../../tasks/stash-book.json"),
];

static REGISTRY: LazyLock<BTreeMap<String, TaskSpec>> = LazyLock::new(|| {
    TASK_SOURCES
        .iter()
        .map(|src| {
            let spec: TaskSpec = serde_json::from_str(src).expect("bundled task spec parses");
            (spec.name.clone(), spec)
        })
        .collect()
});

pub fn task_names() -> Vec<&'static str> {
    REGISTRY.keys().map(String::as_str).collect()
}

pub fn task(name: &str) -> Result<&'static TaskSpec, EnvStateError> {
    REGISTRY
        .get(name)
        .ok_or_else(|| EnvStateError::UnknownTask(name.to_string()))
}

pub fn reset(name: &str) -> Result<WorldState, EnvStateError> {
    Ok(task(name)?.initial_state())
}

/// The action vocabulary, as offered to agents.
pub fn tool_descriptors() -> Vec<ToolDescriptor> {
    [
        ("GoTo", "GoTo(place)"),
        ("PickUp", "PickUp(object)"),
        ("Put", "Put(object, place)"),
        ("Open", "Open(object)"),
        ("Close", "Close(object)"),
        ("ToggleObject", "ToggleObject(object)"),
    ]
    .into_iter()
    .map(|(name, signature)| ToolDescriptor {
        name: name.into(),
        signature: signature.into(),
    })
    .collect()
}

impl TaskSpec {
    pub fn initial_state(&self) -> WorldState {
        WorldState {
            agent_location: self.start.clone(),
            object_states: self
                .objects
                .iter()
                .map(|(name, o)| {
                    (
                        name.clone(),
                        ObjectState {
                            location: o.location.clone(),
                            attributes: o.attributes.clone(),
                        },
                    )
                })
                .collect(),
            terminal: false,
            completed_goal: false,
        }
    }

    pub fn places(&self) -> BTreeSet<&str> {
        self.adjacency
            .iter()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .collect()
    }

    pub fn neighbors(&self, place: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .adjacency
            .iter()
            .filter_map(|(a, b)| {
                if a == place {
                    Some(b.as_str())
                } else if b == place {
                    Some(a.as_str())
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    fn adjacent(&self, a: &str, b: &str) -> bool {
        self.adjacency
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    fn goal_met(&self, s: &WorldState) -> bool {
        let located = self
            .goal
            .locations
            .iter()
            .all(|(o, p)| s.object_states.get(o).is_some_and(|x| &x.location == p));
        let attributes = self.goal.attributes.iter().all(|(o, a, v)| {
            s.object_states
                .get(o)
                .and_then(|x| x.attributes.get(a))
                .is_some_and(|x| x == v)
        });
        located && attributes
    }

    /// Whether `place` is the inside of a container that is currently closed.
    fn closed_place(&self, s: &WorldState, place: &str) -> bool {
        s.object_states
            .get(place)
            .and_then(|o| o.attributes.get(OPEN))
            .is_some_and(|open| !open)
    }

    /// Objects openable from the given place.
    pub fn containers_at(&self, s: &WorldState, place: &str) -> Vec<String> {
        s.object_states
            .iter()
            .filter(|(_, o)| o.location == place && o.attributes.contains_key(OPEN))
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Applies one action. Pure: the same state and action always give the same result.
    pub fn step(&self, state: &WorldState, action: &Action) -> (WorldState, String) {
        match self.transition(state, action) {
            Ok((mut next, mut obs)) => {
                if !next.terminal && self.goal_met(&next) {
                    next.terminal = true;
                    obs.push_str(" Task Completed.");
                }
                next.completed_goal = self.goal_met(&next);
                (next, obs)
            }
            Err(message) => (state.clone(), format!("Error: {message}")),
        }
    }

    fn arg(action: &Action, i: usize) -> Result<&str, String> {
        action
            .args
            .get(&i.to_string())
            .map(String::as_str)
            .ok_or_else(|| format!("{} expects {} argument(s).", action.tool, i + 1))
    }

    fn transition(&self, s: &WorldState, action: &Action) -> Result<(WorldState, String), String> {
        let mut next = s.clone();
        let here = s.agent_location.as_str();
        let object = |name: &str| {
            s.object_states
                .get(name)
                .ok_or_else(|| format!("there is no {name} here."))
        };
        let obs = match action.tool.as_str() {
            "GoTo" => {
                let p = Self::arg(action, 0)?;
                if !self.places().contains(p) {
                    return Err(format!("there is no place called {p}."));
                }
                if p == here {
                    return Err(format!("you are already at the {p}."));
                }
                if !self.adjacent(here, p) {
                    return Err(format!("the {p} is not reachable from the {here}."));
                }
                next.agent_location = p.to_string();
                let visible: Vec<&str> = s
                    .object_states
                    .iter()
                    .filter(|(n, o)| o.location == p && n.as_str() != p)
                    .map(|(n, _)| n.as_str())
                    .collect();
                if visible.is_empty() {
                    format!("You arrive at the {p}.")
                } else {
                    format!("You arrive at the {p}. You see: {}.", visible.join(", "))
                }
            }
            "PickUp" => {
                let o = Self::arg(action, 0)?;
                let state = object(o)?;
                if state.location == HELD {
                    return Err(format!("you are already holding the {o}."));
                }
                if state.location != here {
                    return Err(format!("there is no {o} here."));
                }
                if !self.objects[o].portable {
                    return Err(format!("the {o} cannot be picked up."));
                }
                if self.closed_place(s, here) {
                    return Err(format!("the {here} is closed."));
                }
                if s.object_states.values().any(|x| x.location == HELD) {
                    return Err("your hands are full.".into());
                }
                next.object_states.get_mut(o).expect("exists").location = HELD.into();
                format!("You pick up the {o}.")
            }
            "Put" => {
                let o = Self::arg(action, 0)?;
                let p = Self::arg(action, 1)?;
                if object(o)?.location != HELD {
                    return Err(format!("you are not holding the {o}."));
                }
                if p != here {
                    return Err(format!("you are not at the {p}."));
                }
                if self.closed_place(s, p) {
                    return Err(format!("the {p} is closed."));
                }
                next.object_states.get_mut(o).expect("exists").location = p.to_string();
                format!("You put the {o} in the {p}.")
            }
            tool @ ("Open" | "Close") => {
                let o = Self::arg(action, 0)?;
                let state = object(o)?;
                if state.location != here {
                    return Err(format!("there is no {o} here."));
                }
                let Some(&open) = state.attributes.get(OPEN) else {
                    return Err(format!("the {o} cannot be opened."));
                };
                let want = tool == "Open";
                if open == want {
                    let already = if want { "open" } else { "closed" };
                    return Err(format!("the {o} is already {already}."));
                }
                next.object_states
                    .get_mut(o)
                    .expect("exists")
                    .attributes
                    .insert(OPEN.into(), want);
                let verb = if want { "open" } else { "close" };
                format!("You {verb} the {o}.")
            }
            "ToggleObject" => {
                let o = Self::arg(action, 0)?;
                if object(o)?.location != here {
                    return Err(format!("there is no {o} here."));
                }
                let Some(toggle) = self.toggles.get(o) else {
                    return Err(format!("the {o} cannot be toggled."));
                };
                if toggle.requires_closed && !self.closed_place(s, o) {
                    return Err(format!("the {o} must be closed first."));
                }
                let mut changed = Vec::new();
                for (name, x) in next.object_states.iter_mut() {
                    if name != o && x.location == toggle.place {
                        if let Some(v) = x.attributes.get_mut(&toggle.sets) {
                            if !*v {
                                *v = true;
                                changed.push(format!("{name} (State Changed: {})", toggle.sets));
                            }
                        }
                    }
                }
                if changed.is_empty() {
                    format!("You toggle the {o}. Nothing changes.")
                } else {
                    format!("You toggle the {o}. {}.", changed.join(", "))
                }
            }
            _ => return Err(format!("unknown action '{}'.", action.raw)),
        };
        Ok((next, obs))
    }

    /// Replays `actions` from the initial state, returning every intermediate state
    /// (`actions.len() + 1` of them) and the observations.
    pub fn replay<'a>(
        &self,
        actions: impl IntoIterator<Item = &'a Action>,
    ) -> (Vec<WorldState>, Vec<String>) {
        let mut states = vec![self.initial_state()];
        let mut observations = Vec::new();
        for a in actions {
            let (next, obs) = self.step(states.last().expect("non-empty"), a);
            states.push(next);
            observations.push(obs);
        }
        (states, observations)
    }

    pub fn blank_trajectory(&self, id: impl Into<String>) -> Trajectory {
        Trajectory {
            id: id.into(),
            instruction: self.instruction.clone(),
            available_tools: tool_descriptors(),
            steps: Vec::new(),
            domain: Domain::Embodied,
            task: "alfworld".into(),
            metadata: BTreeMap::from([(META_ENV_TASK.to_string(), self.name.clone())]),
        }
    }
}

impl WorldState {
    /// Canonical JSON bytes. Maps are ordered, so equal states give equal bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    /// Digest followed by the canonical bytes.
    pub fn to_blob(&self) -> Vec<u8> {
        let body = self.canonical_bytes();
        let mut blob = Sha256::digest(&body).to_vec();
        blob.extend_from_slice(&body);
        blob
    }

    pub fn from_blob(blob: &[u8]) -> Result<Self, EnvStateError> {
        if blob.len() < 32 {
            return Err(EnvStateError::CorruptBlob(format!("{} bytes is too short", blob.len())));
        }
        let (digest, body) = blob.split_at(32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(EnvStateError::CorruptBlob("digest mismatch".into()));
        }
        serde_json::from_slice(body).map_err(|e| EnvStateError::CorruptBlob(e.to_string()))
    }
}

pub fn checkpoint(state: &WorldState, step_index: usize) -> Checkpoint {
    Checkpoint {
        step_index,
        state_blob: state.to_blob(),
    }
}

pub fn restore(checkpoint: &Checkpoint) -> Result<WorldState, EnvStateError> {
    WorldState::from_blob(&checkpoint.state_blob)
}

/// Id of a task's golden trajectory.
pub fn golden_id(task: &str) -> String {
    format!("scriptenv-{task}")
}

/// Runs the task's golden script from the initial state.
pub fn golden_run(name: &str) -> Result<Trajectory, EnvStateError> {
    let spec = task(name)?;
    let mut trajectory = spec.blank_trajectory(golden_id(name));
    let mut state = spec.initial_state();
    for (i, s) in spec.script.iter().enumerate() {
        let action = Action::from_raw(s.action.clone());
        let (next, obs) = spec.step(&state, &action);
        trajectory
            .steps
            .push(Step::new(i + 1, s.thought.clone(), action, obs));
        state = next;
    }
    Ok(trajectory)
}
