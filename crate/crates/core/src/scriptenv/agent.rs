use serde::{Deserialize, Serialize};

use super::{task, EnvStateError, ScriptStep};
use crate::monitor::{AgentContext, AgentPolicy, AgentTurn};
use crate::synth::{Payload, PerturbationSpec};
use crate::trajectory::{Action, AnomalyType};

/// What the agent changes when a step is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnRejection {
    /// Drop or undo only the rejected injected step.
    #[default]
    SkipFaultyAction,
    /// Drop the whole injection and follow the golden script.
    ReplayGolden,
    /// Change nothing and repeat the same plan.
    Persist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAgentSpec {
    pub golden_script: Vec<ScriptStep>,
    #[serde(default)]
    pub injection: Option<PerturbationSpec>,
    #[serde(default)]
    pub on_rejection: OnRejection,
}

impl ScriptedAgentSpec {
    pub fn for_task(name: &str) -> Result<Self, EnvStateError> {
        Ok(ScriptedAgentSpec {
            golden_script: task(name)?.script.clone(),
            injection: None,
            on_rejection: OnRejection::default(),
        })
    }

    pub fn with_injection(mut self, spec: PerturbationSpec, on_rejection: OnRejection) -> Self {
        self.injection = Some(spec);
        self.on_rejection = on_rejection;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub thought: String,
    pub action: String,
    pub injected: bool,
    /// The golden step an injected step replaced, if any.
    #[serde(default)]
    pub original: Option<ScriptStep>,
}

impl PlannedStep {
    fn golden(s: &ScriptStep) -> Self {
        PlannedStep {
            thought: s.thought.clone(),
            action: s.action.clone(),
            injected: false,
            original: None,
        }
    }

    fn injected(thought: &str, action: &str, original: Option<ScriptStep>) -> Self {
        PlannedStep {
            thought: thought.to_string(),
            action: action.to_string(),
            injected: true,
            original,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptedAgentError {
    #[error("{0} injections cannot be acted out by a scripted agent")]
    Unsupported(AnomalyType),
    #[error("injection at step {target_step} outside a {n}-step script")]
    OutOfRange { target_step: usize, n: usize },
}

/// Follows a fixed plan: the golden script with an optional injected fault. Step `i` of the
/// trajectory is always plan entry `i`, so rollbacks need no bookkeeping beyond rejections.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    golden: Vec<ScriptStep>,
    plan: Vec<PlannedStep>,
    on_rejection: OnRejection,
    seen_rejections: usize,
}

impl ScriptedAgent {
    pub fn new(spec: &ScriptedAgentSpec) -> Result<Self, ScriptedAgentError> {
        let golden = &spec.golden_script;
        let mut plan: Vec<PlannedStep> = golden.iter().map(PlannedStep::golden).collect();
        if let Some(inj) = &spec.injection {
            let t = inj.target_step;
            if t == 0 || t > golden.len() {
                return Err(ScriptedAgentError::OutOfRange {
                    target_step: t,
                    n: golden.len(),
                });
            }
            match &inj.payload {
                Payload::Ia { flawed_thought } => {
                    let original = golden[t - 1].clone();
                    let action = original.action.clone();
                    plan[t - 1] = PlannedStep::injected(flawed_thought, &action, Some(original));
                }
                Payload::Ib { bad_action, .. } => {
                    let thought = golden[t - 1].thought.clone();
                    plan.insert(t - 1, PlannedStep::injected(&thought, &bad_action.raw, None));
                }
                Payload::II { inserted_steps, .. } => {
                    for (k, d) in inserted_steps.iter().enumerate() {
                        plan.insert(t + k, PlannedStep::injected(&d.thought, &d.action.raw, None));
                    }
                }
                Payload::IIIa { .. } | Payload::IIIb { .. } => {
                    return Err(ScriptedAgentError::Unsupported(inj.anomaly_type))
                }
            }
        }
        Ok(ScriptedAgent {
            golden: golden.clone(),
            plan,
            on_rejection: spec.on_rejection,
            seen_rejections: 0,
        })
    }

    pub fn plan(&self) -> &[PlannedStep] {
        &self.plan
    }

    fn reject(&mut self, step: usize) {
        let Some(entry) = step.checked_sub(1).and_then(|i| self.plan.get(i)) else {
            return;
        };
        if !entry.injected {
            return;
        }
        match self.on_rejection {
            OnRejection::Persist => {}
            OnRejection::ReplayGolden => {
                self.plan = self.golden.iter().map(PlannedStep::golden).collect();
            }
            OnRejection::SkipFaultyAction => match entry.original.clone() {
                Some(original) => self.plan[step - 1] = PlannedStep::golden(&original),
                None => {
                    self.plan.remove(step - 1);
                }
            },
        }
    }
}

impl AgentPolicy for ScriptedAgent {
    fn act(&mut self, ctx: &AgentContext<'_>) -> AgentTurn {
        for note in ctx.rejections.iter().skip(self.seen_rejections) {
            self.reject(note.step);
        }
        self.seen_rejections = ctx.rejections.len();
        match self.plan.get(ctx.history.len()) {
            Some(p) => AgentTurn {
                thought: p.thought.clone(),
                action: Action::from_raw(p.action.clone()),
            },
            None => AgentTurn {
                thought: "Nothing left in my plan.".into(),
                action: Action::from_raw("Wait"),
            },
        }
    }
}
