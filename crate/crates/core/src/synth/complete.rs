use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PerturbedPrefix, StepDraft, META_ANOMALY_TYPE, META_SOURCE_ID, META_TARGET_STEP};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest};
use crate::rng::UnitRng;
use crate::trajectory::{AnomalyType, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationFailure {
    #[error("generator refused: {text}")]
    Refusal { text: String },
    #[error("unusable continuation: {message}")]
    ParseFailure {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        raw: Option<String>,
    },
}

impl GenerationFailure {
    pub fn parse(message: impl Into<String>) -> Self {
        GenerationFailure::ParseFailure {
            message: message.into(),
            raw: None,
        }
    }
}

/// Produces the steps that follow a perturbed prefix.
pub trait Generator: Send + Sync {
    fn generate(
        &self,
        prefix: &PerturbedPrefix,
        rng: &mut UnitRng,
    ) -> Result<Vec<StepDraft>, GenerationFailure>;
}

/// Case-insensitive prefixes that mark a continuation as a refusal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalDetector {
    pub phrases: Vec<String>,
}

impl Default for RefusalDetector {
    fn default() -> Self {
        RefusalDetector {
            phrases: [
                "I'm sorry",
                "I am sorry",
                "I cannot",
                "I can't",
                "I apologize",
                "I won't",
                "I will not",
                "As an AI",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl RefusalDetector {
    pub fn is_refusal(&self, text: &str) -> bool {
        let text = text.trim_start().to_lowercase();
        self.phrases
            .iter()
            .any(|p| text.starts_with(&p.to_lowercase()))
    }
}

/// Id of the trajectory completed from `prefix`.
pub fn completed_id(prefix: &PerturbedPrefix) -> String {
    format!(
        "{}~{}@{}",
        prefix.source.id,
        prefix.spec.anomaly_type.code(),
        prefix.spec.target_step
    )
}

/// Prefix followed by the generated continuation, reindexed.
pub fn complete_trajectory(
    prefix: &PerturbedPrefix,
    generator: &dyn Generator,
    refusal: &RefusalDetector,
    rng: &mut UnitRng,
) -> Result<Trajectory, GenerationFailure> {
    let drafts = match generator.generate(prefix, rng) {
        Ok(d) => d,
        Err(GenerationFailure::ParseFailure { raw: Some(raw), .. }) if refusal.is_refusal(&raw) => {
            return Err(GenerationFailure::Refusal { text: raw })
        }
        Err(e) => return Err(e),
    };
    if let Some(first) = drafts.first() {
        if refusal.is_refusal(&first.thought) {
            return Err(GenerationFailure::Refusal {
                text: first.thought.clone(),
            });
        }
    }
    if drafts.is_empty() && prefix.spec.anomaly_type == AnomalyType::RedundantContinuation {
        return Err(GenerationFailure::parse(
            "empty continuation after an injected completion signal",
        ));
    }
    let source = &prefix.source;
    let mut metadata = source.metadata.clone();
    metadata.insert(META_SOURCE_ID.into(), source.id.clone());
    metadata.insert(META_ANOMALY_TYPE.into(), prefix.spec.anomaly_type.code().into());
    metadata.insert(META_TARGET_STEP.into(), prefix.spec.target_step.to_string());
    let mut trajectory = Trajectory {
        id: completed_id(prefix),
        instruction: prefix.instruction.clone(),
        available_tools: prefix.available_tools.clone(),
        steps: prefix.prefix.clone(),
        domain: source.domain,
        task: source.task.clone(),
        metadata,
    };
    let base = trajectory.steps.len();
    trajectory
        .steps
        .extend(drafts.into_iter().enumerate().map(|(k, d)| d.into_step(base + k + 1)));
    trajectory.reindex();
    trajectory
        .validate()
        .map_err(|e| GenerationFailure::parse(e.to_string()))?;
    Ok(trajectory)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedMode {
    /// The same continuation every time.
    Fixed(Vec<StepDraft>),
    /// The seed's own steps after `t`.
    GoldenSuffix,
}

/// Deterministic generator for tests and offline runs. Seeds listed in `refuse` get a
/// refusal; seeds in `garble` get output that cannot be read as steps.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    pub mode: ScriptedMode,
    pub refuse: BTreeSet<String>,
    pub garble: BTreeSet<String>,
}

impl ScriptedGenerator {
    pub fn new(mode: ScriptedMode) -> Self {
        ScriptedGenerator {
            mode,
            refuse: BTreeSet::new(),
            garble: BTreeSet::new(),
        }
    }

    pub fn golden_suffix() -> Self {
        Self::new(ScriptedMode::GoldenSuffix)
    }
}

impl Generator for ScriptedGenerator {
    fn generate(
        &self,
        prefix: &PerturbedPrefix,
        _rng: &mut UnitRng,
    ) -> Result<Vec<StepDraft>, GenerationFailure> {
        let id = &prefix.source.id;
        if self.refuse.contains(id) {
            return Ok(vec![StepDraft::new(
                "I'm sorry, but I can't continue this trajectory.",
                "noop",
                "",
            )]);
        }
        if self.garble.contains(id) {
            return Err(GenerationFailure::ParseFailure {
                message: "no step structure in output".into(),
                raw: Some("%%%".into()),
            });
        }
        Ok(match &self.mode {
            ScriptedMode::Fixed(steps) => steps.clone(),
            ScriptedMode::GoldenSuffix => prefix.source.steps[prefix.spec.target_step..]
                .iter()
                .map(StepDraft::from_step)
                .collect(),
        })
    }
}

/// Continues prefixes with a chat model. The reply must contain a JSON array of
/// `{"thought", "action", "observation"}` objects.
pub struct LlmGenerator {
    backend: Arc<dyn ChatBackend>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmGenerator {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        LlmGenerator {
            backend,
            temperature: 0.7,
            max_tokens: 2048,
        }
    }

    pub fn request(&self, prefix: &PerturbedPrefix) -> ChatRequest {
        #[derive(Serialize)]
        struct Shown<'a> {
            step: usize,
            thought: &'a str,
            action: &'a str,
            observation: &'a str,
        }
        let shown: Vec<Shown> = prefix
            .prefix
            .iter()
            .map(|s| Shown {
                step: s.index,
                thought: &s.thought,
                action: &s.action.raw,
                observation: &s.observation,
            })
            .collect();
        let tools: Vec<&str> = prefix.available_tools.iter().map(|t| t.signature.as_str()).collect();
        let system = "You continue the execution trajectory of a tool-using agent. Stay \
                      consistent with every step already taken, including any mistakes. Reply \
                      with a JSON array of objects with keys \"thought\", \"action\" and \
                      \"observation\", one per remaining step, and nothing else.";
        let user = format!(
            "Task: {}\nTools: {}\nSteps so far:\n{}\nDirective: {}",
            prefix.instruction,
            serde_json::to_string(&tools).expect("serializes"),
            serde_json::to_string_pretty(&shown).expect("serializes"),
            prefix.completion_directive,
        );
        ChatRequest::new(vec![ChatMessage::system(system), ChatMessage::user(user)])
            .with_temperature(self.temperature)
            .max_tokens(self.max_tokens)
    }
}

impl ChatRequest {
    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Deserialize)]
struct RawDraft {
    thought: String,
    action: String,
    observation: String,
}

fn parse_drafts(raw: &str) -> Option<Vec<StepDraft>> {
    raw.match_indices('[').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Vec<RawDraft>>();
        match stream.next() {
            Some(Ok(v)) => Some(
                v.into_iter()
                    .map(|d| StepDraft::new(d.thought, &d.action, d.observation))
                    .collect(),
            ),
            _ => None,
        }
    })
}

impl Generator for LlmGenerator {
    fn generate(
        &self,
        prefix: &PerturbedPrefix,
        _rng: &mut UnitRng,
    ) -> Result<Vec<StepDraft>, GenerationFailure> {
        let raw = self
            .backend
            .complete(&self.request(prefix))
            .map_err(|e| GenerationFailure::parse(format!("gateway: {e}")))?;
        let drafts = parse_drafts(&raw).ok_or_else(|| GenerationFailure::ParseFailure {
            message: "no JSON array of steps in reply".into(),
            raw: Some(raw.clone()),
        })?;
        if drafts.iter().any(|d| d.action.raw.trim().is_empty()) {
            return Err(GenerationFailure::ParseFailure {
                message: "step with empty action".into(),
                raw: Some(raw),
            });
        }
        Ok(drafts)
    }
}
