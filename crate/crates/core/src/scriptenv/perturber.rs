use rand::seq::SliceRandom;

use super::{task, TaskSpec, WorldState, META_ENV_TASK};
use crate::rng::UnitRng;
use crate::synth::{
    GenerationFailure, Generator, InsertionPattern, Payload, PerturbationSpec, PerturbedPrefix,
    Perturber, StepDraft, SynthError, TemplatePerturber,
};
use crate::trajectory::{Action, AnomalyType, Trajectory};

fn env_task(t: &Trajectory) -> Option<&'static TaskSpec> {
    task(t.metadata.get(META_ENV_TASK)?).ok()
}

/// Perturbations checked against the environment: I.b uses an action the environment
/// really rejects and II inserts a two-step loop that returns to the state after step `t`.
/// Other subtypes fall back to [`TemplatePerturber`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptEnvPerturber;

impl ScriptEnvPerturber {
    fn invalid_action(
        spec: &TaskSpec,
        before: &WorldState,
        rng: &mut UnitRng,
    ) -> Option<(Action, String)> {
        let mut candidates: Vec<String> = Vec::new();
        for o in before.object_states.keys() {
            candidates.push(format!("PickUp({o})"));
            candidates.push(format!("ToggleObject({o})"));
        }
        for p in spec.places() {
            candidates.push(format!("GoTo({p})"));
        }
        let errors: Vec<(Action, String)> = candidates
            .into_iter()
            .map(Action::from_raw)
            .filter_map(|a| {
                let (_, obs) = spec.step(before, &a);
                obs.starts_with("Error:").then_some((a, obs))
            })
            .collect();
        errors.choose(rng).cloned()
    }

    fn loops(spec: &TaskSpec, states: &[WorldState], t: usize) -> Vec<[StepDraft; 2]> {
        let here = &states[t];
        let place = here.agent_location.as_str();
        let mut pairs: Vec<(String, String)> = spec
            .neighbors(place)
            .into_iter()
            .map(|p| (format!("GoTo({p})"), format!("GoTo({place})")))
            .collect();
        for c in spec.containers_at(here, place) {
            pairs.push((format!("Open({c})"), format!("Close({c})")));
            pairs.push((format!("Close({c})"), format!("Open({c})")));
        }
        pairs
            .into_iter()
            .filter_map(|(a, b)| {
                let (a, b) = (Action::from_raw(a), Action::from_raw(b));
                let (mid, obs_a) = spec.step(here, &a);
                let (end, obs_b) = spec.step(&mid, &b);
                let fresh = !states[..=t].contains(&mid);
                let ok = !obs_a.starts_with("Error:") && !obs_b.starts_with("Error:");
                (fresh && ok && &end == here).then(|| {
                    [
                        StepDraft {
                            thought: format!("Let me check on things with {} first.", a.raw),
                            action: a,
                            observation: obs_a,
                        },
                        StepDraft {
                            thought: "Nothing useful there. Back to what I was doing.".into(),
                            action: b,
                            observation: obs_b,
                        },
                    ]
                })
            })
            .collect()
    }
}

impl Perturber for ScriptEnvPerturber {
    fn spec(
        &self,
        gold: &Trajectory,
        anomaly_type: AnomalyType,
        target_step: usize,
        rng: &mut UnitRng,
    ) -> Result<PerturbationSpec, SynthError> {
        let Some(spec) = env_task(gold) else {
            return TemplatePerturber.spec(gold, anomaly_type, target_step, rng);
        };
        let t = target_step;
        let none = || SynthError::NoPerturbation {
            id: gold.id.clone(),
            anomaly_type,
            target_step: t,
        };
        if t == 0 || t > gold.len() {
            return Err(SynthError::IndexError {
                target_step: t,
                max: gold.len(),
                n: gold.len(),
            });
        }
        let (states, _) = spec.replay(gold.steps.iter().map(|s| &s.action));
        match anomaly_type {
            AnomalyType::ExecutionError => {
                let (bad_action, expected_exception) =
                    Self::invalid_action(spec, &states[t - 1], rng).ok_or_else(none)?;
                Ok(PerturbationSpec::new(
                    t,
                    Payload::Ib {
                        bad_action,
                        expected_exception,
                    },
                ))
            }
            AnomalyType::Inefficiency => {
                if t >= gold.len() {
                    return Err(none());
                }
                let inserted = Self::loops(spec, &states, t)
                    .choose(rng)
                    .cloned()
                    .ok_or_else(none)?;
                Ok(PerturbationSpec::new(
                    t,
                    Payload::II {
                        inserted_steps: inserted.to_vec(),
                        pattern: InsertionPattern::Loop,
                    },
                ))
            }
            _ => TemplatePerturber.spec(gold, anomaly_type, t, rng),
        }
    }
}

/// Continues a perturbed scriptenv prefix by following the rest of the golden script in
/// the environment. After an I.b fault the original step `t` is retried first.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptEnvGenerator;

impl Generator for ScriptEnvGenerator {
    fn generate(
        &self,
        prefix: &PerturbedPrefix,
        _rng: &mut UnitRng,
    ) -> Result<Vec<StepDraft>, GenerationFailure> {
        let spec = env_task(&prefix.source)
            .ok_or_else(|| GenerationFailure::parse("source is not a scriptenv trajectory"))?;
        let t = prefix.spec.target_step;
        let (states, _) = spec.replay(prefix.prefix.iter().map(|s| &s.action));
        let mut state = states.last().expect("non-empty").clone();
        let resume = match prefix.spec.anomaly_type {
            AnomalyType::ExecutionError => t - 1,
            _ => t,
        };
        let mut drafts = Vec::new();
        for step in &prefix.source.steps[resume..] {
            let (next, observation) = spec.step(&state, &step.action);
            state = next;
            drafts.push(StepDraft {
                thought: step.thought.clone(),
                action: step.action.clone(),
                observation,
            });
        }
        Ok(drafts)
    }
}
