//! Rule-based verification for environments whose states can be replayed.
//!
//! - R1: a step whose resulting state equals an earlier state (the initial one included)
//!   closes a cycle; the step right after that earlier state is the first redundant one.
//! - R2: an observation matching the exception pattern is an execution error.
//! - R3: any step after a "task completed" observation is a redundant continuation.
//!
//! The earliest step wins; ties go R2, then R3, then R1.

use std::sync::Arc;

use regex::Regex;

use super::{DiagnosticReport, Verifier, VerifierError};
use crate::trajectory::Trajectory;

/// Reconstructs the environment states a trajectory passes through.
pub trait StateTracker: Send + Sync {
    /// `n + 1` state fingerprints: the initial state, then the state after each step. `None`
    /// when the trajectory does not belong to a known environment.
    fn states(&self, trajectory: &Trajectory) -> Option<Vec<Vec<u8>>>;
}

#[derive(Clone)]
pub struct RuleSet {
    pub exception: Regex,
    pub terminal: Regex,
    pub tracker: Option<Arc<dyn StateTracker>>,
}

impl std::fmt::Debug for RuleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuleSet")
            .field("exception", &self.exception.as_str())
            .field("terminal", &self.terminal.as_str())
            .field("tracker", &self.tracker.is_some())
            .finish()
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            exception: Regex::new(r"^(?:Error|Exception|Traceback)\b").expect("valid regex"),
            terminal: Regex::new(r"(?i)\btask completed\b").expect("valid regex"),
            tracker: None,
        }
    }
}

impl RuleSet {
    pub fn with_tracker(mut self, tracker: Arc<dyn StateTracker>) -> Self {
        self.tracker = Some(tracker);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Rule {
    Exception,
    PastTerminal,
    Cycle,
}

struct Hit {
    step: usize,
    rule: Rule,
    content: String,
}

fn r1(trajectory: &Trajectory, tracker: &dyn StateTracker) -> Option<Hit> {
    let states = tracker.states(trajectory)?;
    (1..states.len()).find_map(|j| {
        let i = states[..j].iter().position(|s| *s == states[j])?;
        let action = &trajectory.steps[i].action.raw;
        let earlier = if i == 0 {
            "the initial state".to_string()
        } else {
            format!("the state after step {i}")
        };
        Some(Hit {
            step: i + 1,
            rule: Rule::Cycle,
            content: format!(
                "redundant {action}: the state after step {j} repeats {earlier}, so steps {}..{j} made no progress",
                i + 1
            ),
        })
    })
}

fn r2(trajectory: &Trajectory, rules: &RuleSet) -> Option<Hit> {
    trajectory
        .steps
        .iter()
        .find(|s| rules.exception.is_match(&s.observation))
        .map(|s| Hit {
            step: s.index,
            rule: Rule::Exception,
            content: format!("execution error from {}: {}", s.action.raw, s.observation),
        })
}

fn r3(trajectory: &Trajectory, rules: &RuleSet) -> Option<Hit> {
    let t = trajectory
        .steps
        .iter()
        .position(|s| rules.terminal.is_match(&s.observation))?;
    (t + 1 < trajectory.len()).then(|| Hit {
        step: t + 2,
        rule: Rule::PastTerminal,
        content: format!("the agent kept acting after the task was completed at step {}", t + 1),
    })
}

pub fn rule_verify(trajectory: &Trajectory, rules: &RuleSet) -> DiagnosticReport {
    let hits = [
        r2(trajectory, rules),
        r3(trajectory, rules),
        rules.tracker.as_deref().and_then(|t| r1(trajectory, t)),
    ];
    hits.into_iter()
        .flatten()
        .min_by_key(|h| (h.step, h.rule))
        .map(|h| DiagnosticReport::anomaly(h.step, h.content))
        .unwrap_or_else(|| DiagnosticReport::normal(""))
}

#[derive(Debug, Clone, Default)]
pub struct RuleVerifier {
    pub rules: RuleSet,
}

impl Verifier for RuleVerifier {
    fn verify(&self, trajectory: &Trajectory) -> Result<DiagnosticReport, VerifierError> {
        Ok(rule_verify(trajectory, &self.rules))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Action, Domain, Step};

    fn traj(observations: &[&str]) -> Trajectory {
        Trajectory {
            id: "t".into(),
            instruction: "do".into(),
            available_tools: vec![],
            steps: observations
                .iter()
                .enumerate()
                .map(|(i, o)| Step::new(i + 1, "think", Action::from_raw(format!("act{i}")), *o))
                .collect(),
            domain: Domain::Web,
            task: "webshop".into(),
            metadata: Default::default(),
        }
    }

    /// States are the observations themselves, prefixed by a fixed initial state.
    struct ObsStates;
    impl StateTracker for ObsStates {
        fn states(&self, t: &Trajectory) -> Option<Vec<Vec<u8>>> {
            let mut v = vec![b"init".to_vec()];
            v.extend(t.steps.iter().map(|s| s.observation.as_bytes().to_vec()));
            Some(v)
        }
    }

    #[test]
    fn r3_first_post_terminal_step() {
        let t = traj(&["a", "b", "c", "d", "e", "Task Completed.", "g", "h", "i"]);
        let r = rule_verify(&t, &RuleSet::default());
        assert_eq!(r.error_step, Some(7));
    }

    #[test]
    fn terminal_at_last_step_is_fine() {
        let t = traj(&["a", "b", "Task Completed."]);
        assert!(!rule_verify(&t, &RuleSet::default()).is_anomaly());
    }

    #[test]
    fn r2_exception() {
        let t = traj(&["a", "Error: no such object", "c"]);
        assert_eq!(rule_verify(&t, &RuleSet::default()).error_step, Some(2));
    }

    #[test]
    fn r1_cycle_reports_first_redundant_step() {
        let rules = RuleSet::default().with_tracker(Arc::new(ObsStates));
        let t = traj(&["A", "B", "C", "B", "D"]);
        // State after 4 repeats state after 2: steps 3..4 looped.
        assert_eq!(rule_verify(&t, &rules).error_step, Some(3));
    }

    struct Frozen;
    impl StateTracker for Frozen {
        fn states(&self, t: &Trajectory) -> Option<Vec<Vec<u8>>> {
            Some(vec![Vec::new(); t.len() + 1])
        }
    }

    #[test]
    fn ties_prefer_exception_over_cycle() {
        let rules = RuleSet::default().with_tracker(Arc::new(Frozen));
        let r = rule_verify(&traj(&["Error: x"]), &rules);
        assert_eq!(r.error_step, Some(1));
        assert!(r.error_content.unwrap().starts_with("execution error"));
        let r = rule_verify(&traj(&["fine"]), &rules);
        assert!(r.error_content.unwrap().starts_with("redundant act0"));
    }

    #[test]
    fn clean_run_is_normal() {
        let rules = RuleSet::default().with_tracker(Arc::new(ObsStates));
        assert!(!rule_verify(&traj(&["A", "B", "C"]), &rules).is_anomaly());
    }
}
