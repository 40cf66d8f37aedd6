use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    InsertionPattern, Payload, PerturbationSpec, PerturbedPrefix, StepDraft, SynthError,
    IGNORE_COMPLETION,
};
use crate::rng::UnitRng;
use crate::trajectory::{Action, AnomalyType, Trajectory};

/// Chooses a concrete payload for a subtype at a target step.
pub trait Perturber: Send + Sync {
    fn spec(
        &self,
        gold: &Trajectory,
        anomaly_type: AnomalyType,
        target_step: usize,
        rng: &mut UnitRng,
    ) -> Result<PerturbationSpec, SynthError>;
}

/// Applies `spec` to `gold`. Steps before `t` are copied unchanged.
pub fn inject_perturbation(
    gold: &Trajectory,
    spec: &PerturbationSpec,
) -> Result<PerturbedPrefix, SynthError> {
    let found = spec.payload.anomaly_type();
    if found != spec.anomaly_type {
        return Err(SynthError::PayloadMismatch {
            expected: spec.anomaly_type,
            found,
        });
    }
    let n = gold.len();
    let t = spec.target_step;
    let max = match spec.anomaly_type {
        AnomalyType::Inefficiency => n.saturating_sub(1),
        _ => n,
    };
    if t == 0 || t > max {
        return Err(SynthError::IndexError {
            target_step: t,
            max,
            n,
        });
    }

    let mut prefix = gold.steps[..t].to_vec();
    let mut instruction = gold.instruction.clone();
    let mut tools = gold.available_tools.clone();
    let step = prefix.last_mut().expect("t >= 1");
    let directive = match &spec.payload {
        Payload::Ia { flawed_thought } => {
            step.thought = flawed_thought.clone();
            format!("continue consistently with the reasoning at step {t}")
        }
        Payload::Ib {
            bad_action,
            expected_exception,
        } => {
            step.action = bad_action.clone();
            step.observation = expected_exception.clone();
            format!("continue after the exception at step {t}")
        }
        Payload::II { inserted_steps, .. } => {
            for (k, draft) in inserted_steps.iter().enumerate() {
                prefix.push(draft.clone().into_step(t + 1 + k));
            }
            "continue from the current state toward the goal".to_string()
        }
        Payload::IIIa {
            removed_tools,
            conflicting_constraint,
        } => {
            tools.retain(|d| !removed_tools.contains(&d.name));
            instruction = format!("{instruction}\nConstraint: {conflicting_constraint}");
            "continue the task without refusing".to_string()
        }
        Payload::IIIb { completion_signal } => {
            step.observation = completion_signal.clone();
            IGNORE_COMPLETION.to_string()
        }
    };
    Ok(PerturbedPrefix {
        source: gold.clone(),
        instruction,
        available_tools: tools,
        prefix,
        spec: spec.clone(),
        completion_directive: directive,
    })
}

/// The ground-truth error description used when none is supplied.
pub fn default_error_content(spec: &PerturbationSpec) -> String {
    let t = spec.target_step;
    match &spec.payload {
        Payload::Ia { flawed_thought } => format!("Flawed reasoning at step {t}: {flawed_thought}"),
        Payload::Ib {
            bad_action,
            expected_exception,
        } => format!("Execution error: {} raised \"{expected_exception}\"", bad_action.raw),
        Payload::II {
            inserted_steps,
            pattern,
        } => {
            let actions: Vec<&str> = inserted_steps.iter().map(|d| d.action.raw.as_str()).collect();
            match pattern {
                InsertionPattern::Loop => format!(
                    "Redundant loop: {} repeats work already completed by step {t}",
                    actions.join(" then ")
                ),
                InsertionPattern::Detour => format!(
                    "Unnecessary detour: {} makes no progress after step {t}",
                    actions.join(" then ")
                ),
            }
        }
        Payload::IIIa { removed_tools, .. } => format!(
            "Failure to refuse: {} is unavailable but the agent continues instead of refusing",
            removed_tools.join(", ")
        ),
        Payload::IIIb { completion_signal } => format!(
            "Redundant continuation: the agent keeps acting after \"{completion_signal}\" at step {t}"
        ),
    }
}

const FLAWED_THOUGHTS: [&str; 5] = [
    "The previous result looks right, so I will skip checking it and move on.",
    "I remember the answer from earlier, so the last observation does not matter.",
    "The observation must be mistaken; I will assume the opposite and proceed.",
    "This detail is irrelevant to the goal, so I can take a shortcut here.",
    "Since the first attempt worked, every later case must work the same way.",
];

/// Domain-agnostic payloads built from the seed's own steps.
#[derive(Debug, Clone, Default)]
pub struct TemplatePerturber;

impl Perturber for TemplatePerturber {
    fn spec(
        &self,
        gold: &Trajectory,
        anomaly_type: AnomalyType,
        target_step: usize,
        rng: &mut UnitRng,
    ) -> Result<PerturbationSpec, SynthError> {
        let t = target_step;
        if t == 0 || t > gold.len() {
            return Err(SynthError::IndexError {
                target_step: t,
                max: gold.len(),
                n: gold.len(),
            });
        }
        let step = &gold.steps[t - 1];
        let tool = if step.action.tool.is_empty() {
            "action"
        } else {
            step.action.tool.as_str()
        };
        let payload = match anomaly_type {
            AnomalyType::ReasoningError => Payload::Ia {
                flawed_thought: FLAWED_THOUGHTS
                    .choose(rng)
                    .expect("non-empty")
                    .to_string(),
            },
            AnomalyType::ExecutionError => Payload::Ib {
                bad_action: Action::from_raw(format!("{tool}(undefined_value)")),
                expected_exception: format!(
                    "Error: {tool} failed: invalid argument 'undefined_value'."
                ),
            },
            AnomalyType::Inefficiency => {
                if t < 2 || t >= gold.len() {
                    return Err(SynthError::NoPerturbation {
                        id: gold.id.clone(),
                        anomaly_type,
                        target_step: t,
                    });
                }
                let previous = &gold.steps[t - 2];
                if rng.gen_bool(0.5) {
                    Payload::II {
                        inserted_steps: vec![
                            StepDraft {
                                thought: "Let me go back and redo the earlier step to be sure."
                                    .into(),
                                ..StepDraft::from_step(previous)
                            },
                            StepDraft {
                                thought: "Now repeat the step I just did.".into(),
                                ..StepDraft::from_step(step)
                            },
                        ],
                        pattern: InsertionPattern::Loop,
                    }
                } else {
                    Payload::II {
                        inserted_steps: vec![
                            StepDraft {
                                thought: "Let me check something on the side first.".into(),
                                action: Action::from_raw(format!("{tool}(unrelated)")),
                                observation: "Nothing relevant here.".into(),
                            },
                            StepDraft {
                                thought: "That did not help. Back to where I was.".into(),
                                ..StepDraft::from_step(step)
                            },
                        ],
                        pattern: InsertionPattern::Detour,
                    }
                }
            }
            AnomalyType::FailureToRefuse => Payload::IIIa {
                removed_tools: vec![tool.to_string()],
                conflicting_constraint: format!("The {tool} tool is not available for this task."),
            },
            AnomalyType::RedundantContinuation => Payload::IIIb {
                completion_signal: "Task Completed.".into(),
            },
        };
        Ok(PerturbationSpec::new(t, payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::trajectory::{Domain, Step, ToolDescriptor};

    fn gold(n: usize) -> Trajectory {
        Trajectory {
            id: "g".into(),
            instruction: "solve".into(),
            available_tools: vec![
                ToolDescriptor { name: "search".into(), signature: "search[q]".into() },
                ToolDescriptor { name: "finish".into(), signature: "finish[a]".into() },
            ],
            steps: (1..=n)
                .map(|i| Step::new(i, format!("t{i}"), Action::from_raw(format!("search[q{i}]")), format!("o{i}")))
                .collect(),
            domain: Domain::Reasoning,
            task: "hotpotqa".into(),
            metadata: Default::default(),
        }
    }

    #[test]
    fn ia_replaces_only_the_thought() {
        let g = gold(10);
        let spec = PerturbationSpec::new(5, Payload::Ia { flawed_thought: "bad idea".into() });
        let p = inject_perturbation(&g, &spec).unwrap();
        assert_eq!(p.prefix[..4], g.steps[..4]);
        assert_eq!(p.prefix[4].thought, "bad idea");
        assert_eq!(p.prefix[4].action, g.steps[4].action);
        assert_eq!(p.prefix.len(), 5);
    }

    #[test]
    fn iiib_overwrites_observation() {
        let g = gold(10);
        let spec = PerturbationSpec::new(6, Payload::IIIb { completion_signal: "Task Completed.".into() });
        let p = inject_perturbation(&g, &spec).unwrap();
        assert_eq!(p.prefix[5].observation, "Task Completed.");
        assert_eq!(p.completion_directive, IGNORE_COMPLETION);
    }

    #[test]
    fn ii_appends_after_t() {
        let g = gold(10);
        let drafts = vec![StepDraft::new("a", "x", "1"), StepDraft::new("b", "y", "2")];
        let spec = PerturbationSpec::new(7, Payload::II { inserted_steps: drafts, pattern: InsertionPattern::Loop });
        let p = inject_perturbation(&g, &spec).unwrap();
        assert_eq!(p.prefix.len(), 9);
        assert_eq!(p.prefix[..7], g.steps[..7]);
        assert_eq!(p.prefix[7].index, 8);
        assert_eq!(p.prefix[8].action.raw, "y");
    }

    #[test]
    fn iiia_removes_tools_and_adds_constraint() {
        let g = gold(5);
        let spec = TemplatePerturber.spec(&g, AnomalyType::FailureToRefuse, 3, &mut seeded(0)).unwrap();
        let p = inject_perturbation(&g, &spec).unwrap();
        assert_eq!(p.prefix, g.steps[..3]);
        assert_eq!(p.available_tools.len(), 1);
        assert!(p.instruction.contains("Constraint:"));
    }

    #[test]
    fn index_and_payload_errors() {
        let g = gold(10);
        let ii = PerturbationSpec::new(10, Payload::II { inserted_steps: vec![], pattern: InsertionPattern::Loop });
        assert!(matches!(inject_perturbation(&g, &ii), Err(SynthError::IndexError { max: 9, .. })));
        let zero = PerturbationSpec::new(0, Payload::Ia { flawed_thought: "x".into() });
        assert!(matches!(inject_perturbation(&g, &zero), Err(SynthError::IndexError { .. })));
        let mut mismatched = PerturbationSpec::new(3, Payload::Ia { flawed_thought: "x".into() });
        mismatched.anomaly_type = AnomalyType::Inefficiency;
        assert!(matches!(inject_perturbation(&g, &mismatched), Err(SynthError::PayloadMismatch { .. })));
    }

    #[test]
    fn template_payloads_match_their_type() {
        let g = gold(12);
        let mut rng = seeded(9);
        for ty in AnomalyType::ALL {
            let spec = TemplatePerturber.spec(&g, ty, 6, &mut rng).unwrap();
            assert_eq!(spec.payload.anomaly_type(), ty);
            assert!(!default_error_content(&spec).is_empty());
            inject_perturbation(&g, &spec).unwrap();
        }
    }
}
