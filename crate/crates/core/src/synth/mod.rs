//! Perturb-and-complete synthesis of labeled anomalous trajectories.
//!
//! A golden seed is cut at a target step `t`, step `t` is mutated according to the
//! anomaly subtype, a generator continues the mutated prefix, and the result is labeled
//! with the first anomalous step. Goldens and anomalies are then paired into a balanced
//! dataset and split per task without separating pairs.

use serde::{Deserialize, Serialize};

use crate::trajectory::{Action, AnomalyType, Step, ToolDescriptor, Trajectory};

mod annotate;
mod assemble;
mod band;
mod complete;
pub mod corpus;
mod perturb;
mod pipeline;
mod report;
mod seeds;

pub use annotate::{annotate, first_error_step};
pub use assemble::{
    anomaly_mix_plan, assemble_balanced, stratified_split, AssembleError, MixPlan, SplitError,
    CONVENTION_TYPE_II_LOCATION,
};
pub use band::{sample_target_step, Band};
pub use complete::{
    complete_trajectory, completed_id, GenerationFailure, Generator, LlmGenerator,
    RefusalDetector, ScriptedGenerator, ScriptedMode,
};
pub use perturb::{default_error_content, inject_perturbation, Perturber, TemplatePerturber};
pub use pipeline::{synthesize, SynthesisConfig, SynthesisOutput, UnitFailure, UnitFailureKind};
pub use report::PipelineReport;
pub use seeds::{filter_seeds, AcceptAll, RuleValidator, Validator, ValidatorVerdict};

/// Metadata keys written on synthesized trajectories.
pub const META_SOURCE_ID: &str = "source_id";
pub const META_ANOMALY_TYPE: &str = "anomaly_type";
pub const META_TARGET_STEP: &str = "target_step";

/// The directive given to the generator for a III.b perturbation.
pub const IGNORE_COMPLETION: &str = "ignore completion and continue";

/// A step before it has an index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDraft {
    pub thought: String,
    pub action: Action,
    pub observation: String,
}

impl StepDraft {
    pub fn new(thought: impl Into<String>, action: &str, observation: impl Into<String>) -> Self {
        StepDraft {
            thought: thought.into(),
            action: Action::from_raw(action),
            observation: observation.into(),
        }
    }

    pub fn from_step(step: &Step) -> Self {
        StepDraft {
            thought: step.thought.clone(),
            action: step.action.clone(),
            observation: step.observation.clone(),
        }
    }

    pub fn into_step(self, index: usize) -> Step {
        Step::new(index, self.thought, self.action, self.observation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertionPattern {
    /// An action and its inverse, returning to the prior state.
    Loop,
    /// A plausible but useless action followed by a corrective one.
    Detour,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Payload {
    #[serde(rename = "I.a")]
    Ia { flawed_thought: String },
    #[serde(rename = "I.b")]
    Ib {
        bad_action: Action,
        expected_exception: String,
    },
    #[serde(rename = "II")]
    II {
        inserted_steps: Vec<StepDraft>,
        pattern: InsertionPattern,
    },
    #[serde(rename = "III.a")]
    IIIa {
        removed_tools: Vec<String>,
        conflicting_constraint: String,
    },
    #[serde(rename = "III.b")]
    IIIb { completion_signal: String },
}

impl Payload {
    pub fn anomaly_type(&self) -> AnomalyType {
        match self {
            Payload::Ia { .. } => AnomalyType::ReasoningError,
            Payload::Ib { .. } => AnomalyType::ExecutionError,
            Payload::II { .. } => AnomalyType::Inefficiency,
            Payload::IIIa { .. } => AnomalyType::FailureToRefuse,
            Payload::IIIb { .. } => AnomalyType::RedundantContinuation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub anomaly_type: AnomalyType,
    pub target_step: usize,
    pub payload: Payload,
}

impl PerturbationSpec {
    pub fn new(target_step: usize, payload: Payload) -> Self {
        PerturbationSpec {
            anomaly_type: payload.anomaly_type(),
            target_step,
            payload,
        }
    }
}

/// A golden trajectory cut after the mutated step `t` (after the inserted steps for II).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedPrefix {
    pub source: Trajectory,
    pub instruction: String,
    pub available_tools: Vec<ToolDescriptor>,
    pub prefix: Vec<Step>,
    pub spec: PerturbationSpec,
    pub completion_directive: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("trajectory of {n} step(s) is too short to perturb")]
    TooShort { n: usize },
    #[error("target step {target_step} outside 1..={max} for a {n}-step trajectory")]
    IndexError {
        target_step: usize,
        max: usize,
        n: usize,
    },
    #[error("payload is {found} but the spec says {expected}")]
    PayloadMismatch {
        expected: AnomalyType,
        found: AnomalyType,
    },
    #[error("no {anomaly_type} perturbation applies to {id} at step {target_step}")]
    NoPerturbation {
        id: String,
        anomaly_type: AnomalyType,
        target_step: usize,
    },
    #[error("need at least 3 seeds to plan an even mix, got {0}")]
    MixTooSmall(usize),
}
