use regex::Regex;

use super::PipelineReport;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidatorVerdict {
    Accept,
    Reject(String),
}

/// Judges whether a seed is a usable golden trajectory.
pub trait Validator: Send + Sync {
    fn judge(&self, trajectory: &Trajectory) -> ValidatorVerdict;
}

impl<F> Validator for F
where
    F: Fn(&Trajectory) -> ValidatorVerdict + Send + Sync,
{
    fn judge(&self, trajectory: &Trajectory) -> ValidatorVerdict {
        self(trajectory)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl Validator for AcceptAll {
    fn judge(&self, _: &Trajectory) -> ValidatorVerdict {
        ValidatorVerdict::Accept
    }
}

/// Rejects any trajectory with an observation matching `pattern`.
#[derive(Debug, Clone)]
pub struct RuleValidator {
    pub pattern: Regex,
}

impl RuleValidator {
    pub fn new(pattern: &str) -> Result<Self, regex::Error> {
        Ok(RuleValidator {
            pattern: Regex::new(pattern)?,
        })
    }
}

impl Validator for RuleValidator {
    fn judge(&self, trajectory: &Trajectory) -> ValidatorVerdict {
        match trajectory
            .steps
            .iter()
            .find(|s| self.pattern.is_match(&s.observation))
        {
            Some(s) => ValidatorVerdict::Reject(format!(
                "step {} observation matches /{}/",
                s.index,
                self.pattern.as_str()
            )),
            None => ValidatorVerdict::Accept,
        }
    }
}

/// Splits seeds into accepted and rejected, preserving order. Zero-step seeds are always
/// rejected.
pub fn filter_seeds(
    seeds: Vec<Trajectory>,
    validator: &dyn Validator,
) -> (Vec<Trajectory>, Vec<(Trajectory, String)>, PipelineReport) {
    let raw = seeds.len() as u64;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for seed in seeds {
        let verdict = if seed.is_empty() {
            ValidatorVerdict::Reject("trajectory has no steps".into())
        } else {
            validator.judge(&seed)
        };
        match verdict {
            ValidatorVerdict::Accept => accepted.push(seed),
            ValidatorVerdict::Reject(reason) => rejected.push((seed, reason)),
        }
    }
    let report = PipelineReport::from_counts(raw, accepted.len() as u64, 0, 0, 0, 0, 0);
    (accepted, rejected, report)
}
