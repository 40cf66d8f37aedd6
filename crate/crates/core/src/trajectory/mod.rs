//! Trajectory data model: instruction plus ordered (thought, action, observation) steps,
//! ground-truth anomaly labels and labeled datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

mod agentbank;
mod dataset;
mod jsonl;

pub use agentbank::{import_agentbank_record, FieldMapping, MappingError, SourceLayout};
pub use dataset::{Dataset, DatasetError, Manifest};
pub use jsonl::{parse_trajectory_line, read_jsonl, serialize_trajectory, write_jsonl, ParseError};

/// Metadata key set when a step has an empty thought because the source had no reasoning.
pub const META_REASONING_ABSENT: &str = "reasoning_absent";
/// Metadata key set on trajectories with zero steps.
pub const META_DEGENERATE: &str = "degenerate";

/// A tool invocation. `raw` is the action text exactly as the agent emitted it; `tool` and
/// `args` are a best-effort structured reading of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
    pub raw: String,
}

impl Action {
    /// Parses `Tool(a, b)`, `tool[arg]`, or a bare command. Positional arguments are keyed
    /// `"0"`, `"1"`, ...; `key=value` arguments keep their key.
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let trimmed = raw.trim();
        for (open, close) in [('(', ')'), ('[', ']')] {
            if let (Some(start), true) = (trimmed.find(open), trimmed.ends_with(close)) {
                let tool = trimmed[..start].trim();
                if !tool.is_empty() && !tool.contains(char::is_whitespace) {
                    let inner = &trimmed[start + 1..trimmed.len() - 1];
                    return Action {
                        tool: tool.to_string(),
                        args: split_args(inner),
                        raw,
                    };
                }
            }
        }
        let tool = trimmed.split_whitespace().next().unwrap_or_default().to_string();
        Action {
            tool,
            args: BTreeMap::new(),
            raw,
        }
    }
}

fn split_args(inner: &str) -> BTreeMap<String, String> {
    let mut args = BTreeMap::new();
    if inner.trim().is_empty() {
        return args;
    }
    for (position, part) in inner.split(',').enumerate() {
        let part = part.trim();
        match part.split_once('=') {
            Some((key, value)) if !key.trim().is_empty() && !key.contains(' ') => {
                args.insert(key.trim().to_string(), value.trim().to_string());
            }
            _ => {
                args.insert(position.to_string(), part.to_string());
            }
        }
    }
    args
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// One (thought, action, observation) triplet. `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: Action,
    pub observation: String,
}

impl Step {
    pub fn new(
        index: usize,
        thought: impl Into<String>,
        action: Action,
        observation: impl Into<String>,
    ) -> Self {
        Step {
            index,
            thought: thought.into(),
            action,
            observation: observation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub signature: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Math,
    Reasoning,
    Coding,
    Web,
    Embodied,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Math,
        Domain::Reasoning,
        Domain::Coding,
        Domain::Web,
        Domain::Embodied,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Math => "math",
            Domain::Reasoning => "reasoning",
            Domain::Coding => "coding",
            Domain::Web => "web",
            Domain::Embodied => "embodied",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

/// Task names of the seed corpus, grouped by domain.
pub const KNOWN_TASKS: [(Domain, &str); 13] = [
    (Domain::Math, "gsm8k"),
    (Domain::Math, "mathqa"),
    (Domain::Math, "math"),
    (Domain::Reasoning, "hotpotqa"),
    (Domain::Reasoning, "strategyqa"),
    (Domain::Coding, "apps"),
    (Domain::Coding, "humaneval"),
    (Domain::Coding, "mbpp"),
    (Domain::Web, "webshop"),
    (Domain::Web, "mind2web"),
    (Domain::Embodied, "alfworld"),
    (Domain::Embodied, "babyai"),
    (Domain::Embodied, "scienceworld"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub instruction: String,
    pub available_tools: Vec<ToolDescriptor>,
    pub steps: Vec<Step>,
    pub domain: Domain,
    pub task: String,
    pub metadata: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps `1..=n` (clamped to the trajectory length).
    pub fn prefix(&self, n: usize) -> &[Step] {
        &self.steps[..n.min(self.steps.len())]
    }

    /// Rewrites step indices to `1..=n` in order.
    pub fn reindex(&mut self) {
        for (i, step) in self.steps.iter_mut().enumerate() {
            step.index = i + 1;
        }
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let violation = |field: &str, message: String| InvariantViolation {
            field: field.to_string(),
            message,
        };
        if self.id.trim().is_empty() {
            return Err(violation("id", "id must be non-empty".into()));
        }
        if self.task.trim().is_empty() {
            return Err(violation("task", "task must be non-empty".into()));
        }
        let reasoning_absent = self
            .metadata
            .get(META_REASONING_ABSENT)
            .is_some_and(|v| v == "true");
        for (position, step) in self.steps.iter().enumerate() {
            let field = format!("steps[{position}]");
            if step.index != position + 1 {
                return Err(violation(
                    &format!("{field}.index"),
                    format!("expected index {}, found {}", position + 1, step.index),
                ));
            }
            if step.action.raw.is_empty() {
                return Err(violation(
                    &format!("{field}.action.raw"),
                    "raw action text must be non-empty".into(),
                ));
            }
            if step.thought.is_empty() && !reasoning_absent {
                return Err(violation(
                    &format!("{field}.thought"),
                    format!("empty thought requires metadata {META_REASONING_ABSENT}=true"),
                ));
            }
        }
        Ok(())
    }
}

/// The anomaly taxonomy. Serialized names are `"I.a"`, `"I.b"`, `"II"`, `"III.a"`, `"III.b"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyType {
    /// Valid action taken on flawed reasoning.
    #[serde(rename = "I.a")]
    ReasoningError,
    /// Incorrect action causing a runtime exception.
    #[serde(rename = "I.b")]
    ExecutionError,
    /// Redundant but outcome-preserving steps.
    #[serde(rename = "II")]
    Inefficiency,
    /// Impossible task not refused.
    #[serde(rename = "III.a")]
    FailureToRefuse,
    /// Execution continued past completion.
    #[serde(rename = "III.b")]
    RedundantContinuation,
}

/// Top-level anomaly category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyCategory {
    #[serde(rename = "I")]
    TaskFailure,
    #[serde(rename = "II")]
    Inefficiency,
    #[serde(rename = "III")]
    UnwarrantedContinuation,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 5] = [
        AnomalyType::ReasoningError,
        AnomalyType::ExecutionError,
        AnomalyType::Inefficiency,
        AnomalyType::FailureToRefuse,
        AnomalyType::RedundantContinuation,
    ];

    pub fn code(self) -> &'static str {
        match self {
            AnomalyType::ReasoningError => "I.a",
            AnomalyType::ExecutionError => "I.b",
            AnomalyType::Inefficiency => "II",
            AnomalyType::FailureToRefuse => "III.a",
            AnomalyType::RedundantContinuation => "III.b",
        }
    }

    pub fn category(self) -> AnomalyCategory {
        match self {
            AnomalyType::ReasoningError | AnomalyType::ExecutionError => {
                AnomalyCategory::TaskFailure
            }
            AnomalyType::Inefficiency => AnomalyCategory::Inefficiency,
            AnomalyType::FailureToRefuse | AnomalyType::RedundantContinuation => {
                AnomalyCategory::UnwarrantedContinuation
            }
        }
    }
}

impl AnomalyCategory {
    pub const ALL: [AnomalyCategory; 3] = [
        AnomalyCategory::TaskFailure,
        AnomalyCategory::Inefficiency,
        AnomalyCategory::UnwarrantedContinuation,
    ];

    pub fn subtypes(self) -> &'static [AnomalyType] {
        match self {
            AnomalyCategory::TaskFailure => {
                &[AnomalyType::ReasoningError, AnomalyType::ExecutionError]
            }
            AnomalyCategory::Inefficiency => &[AnomalyType::Inefficiency],
            AnomalyCategory::UnwarrantedContinuation => &[
                AnomalyType::FailureToRefuse,
                AnomalyType::RedundantContinuation,
            ],
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for AnomalyType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnomalyType::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| format!("unknown anomaly type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Anomaly,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Normal => "normal",
            Verdict::Anomaly => "anomaly",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground truth for one trajectory. A normal label carries no anomaly fields; an anomalous
/// label carries the subtype, the 1-based first error step and a description of the error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyLabel {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_type: Option<AnomalyType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_error_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl AnomalyLabel {
    pub fn normal() -> Self {
        AnomalyLabel {
            verdict: Verdict::Normal,
            anomaly_type: None,
            first_error_step: None,
            error_content: None,
            source_id: None,
        }
    }

    pub fn anomaly(
        anomaly_type: AnomalyType,
        first_error_step: usize,
        error_content: impl Into<String>,
        source_id: Option<String>,
    ) -> Self {
        AnomalyLabel {
            verdict: Verdict::Anomaly,
            anomaly_type: Some(anomaly_type),
            first_error_step: Some(first_error_step),
            error_content: Some(error_content.into()),
            source_id,
        }
    }

    /// Checks label coherence against a trajectory of `n` steps.
    pub fn validate(&self, n: usize) -> Result<(), InvariantViolation> {
        let violation = |field: &str, message: &str| InvariantViolation {
            field: format!("label.{field}"),
            message: message.to_string(),
        };
        match self.verdict {
            Verdict::Normal => {
                if self.anomaly_type.is_some() {
                    return Err(violation("anomaly_type", "must be absent for a normal label"));
                }
                if self.first_error_step.is_some() {
                    return Err(violation(
                        "first_error_step",
                        "must be absent for a normal label",
                    ));
                }
                if self.error_content.is_some() {
                    return Err(violation("error_content", "must be absent for a normal label"));
                }
            }
            Verdict::Anomaly => {
                if self.anomaly_type.is_none() {
                    return Err(violation("anomaly_type", "required for an anomaly label"));
                }
                if self.error_content.is_none() {
                    return Err(violation("error_content", "required for an anomaly label"));
                }
                match self.first_error_step {
                    None => {
                        return Err(violation(
                            "first_error_step",
                            "required for an anomaly label",
                        ))
                    }
                    Some(step) if step == 0 || step > n => {
                        return Err(InvariantViolation {
                            field: "label.first_error_step".into(),
                            message: format!("step {step} outside 1..={n}"),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub label: AnomalyLabel,
}

impl LabeledTrajectory {
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        self.trajectory.validate()?;
        self.label.validate(self.trajectory.len())
    }

    pub fn id(&self) -> &str {
        &self.trajectory.id
    }

    /// The id shared by a golden seed and the anomalies derived from it.
    pub fn pair_key(&self) -> &str {
        self.label
            .source_id
            .as_deref()
            .unwrap_or(&self.trajectory.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct InvariantViolation {
    pub field: String,
    pub message: String,
}
