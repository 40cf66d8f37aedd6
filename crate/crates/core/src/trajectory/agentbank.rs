//! Adapter from AgentBank-style seed records to [`Trajectory`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Action, Domain, Step, Trajectory, META_DEGENERATE, META_REASONING_ABSENT};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("record is not valid JSON: {0}")]
    Json(String),
    #[error("declared field `{field}` is absent{}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    MissingField {
        field: String,
        location: Option<String>,
    },
    #[error("field `{field}` has the wrong type: expected {expected}")]
    WrongType { field: String, expected: &'static str },
}

/// Where the source record keeps each part of the trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceLayout {
    /// Chat-turn layout: the first user turn is the instruction, then each assistant turn
    /// holds `Thought: ... Action: ...` and the following user turn holds the observation.
    Conversation {
        turns_field: String,
        role_field: String,
        content_field: String,
        user_role: String,
        assistant_role: String,
        thought_marker: String,
        action_marker: String,
        observation_prefix: String,
    },
    /// Explicit per-step objects.
    StepFields {
        instruction_field: String,
        steps_field: String,
        thought_field: String,
        action_field: String,
        observation_field: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub id_field: String,
    pub domain: Domain,
    pub task: String,
    pub layout: SourceLayout,
    /// When set, a step without an observation is an error instead of an empty observation.
    pub strict: bool,
}

impl FieldMapping {
    /// The conversation layout used by AgentBank releases.
    pub fn agentbank(domain: Domain, task: impl Into<String>) -> Self {
        FieldMapping {
            id_field: "id".into(),
            domain,
            task: task.into(),
            layout: SourceLayout::Conversation {
                turns_field: "conversations".into(),
                role_field: "from".into(),
                content_field: "value".into(),
                user_role: "human".into(),
                assistant_role: "gpt".into(),
                thought_marker: "Thought:".into(),
                action_marker: "Action:".into(),
                observation_prefix: "Observation:".into(),
            },
            strict: false,
        }
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }
}

fn field<'a>(obj: &'a Value, name: &str, location: Option<String>) -> Result<&'a Value, MappingError> {
    obj.get(name).ok_or_else(|| MappingError::MissingField {
        field: name.to_string(),
        location,
    })
}

fn text(value: &Value, name: &str) -> Result<String, MappingError> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| MappingError::WrongType {
            field: name.to_string(),
            expected: "string",
        })
}

/// Converts one source record into a trajectory. Provenance goes into metadata; no label
/// is attached.
pub fn import_agentbank_record(record: &str, mapping: &FieldMapping) -> Result<Trajectory, MappingError> {
    let value: Value = serde_json::from_str(record).map_err(|e| MappingError::Json(e.to_string()))?;
    let id = match field(&value, &mapping.id_field, None)? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => {
            return Err(MappingError::WrongType {
                field: mapping.id_field.clone(),
                expected: "string or number",
            })
        }
    };

    let (instruction, drafts) = match &mapping.layout {
        SourceLayout::Conversation {
            turns_field,
            role_field,
            content_field,
            user_role,
            assistant_role,
            thought_marker,
            action_marker,
            observation_prefix,
        } => {
            let turns = field(&value, turns_field, None)?
                .as_array()
                .ok_or(MappingError::WrongType {
                    field: turns_field.clone(),
                    expected: "array",
                })?;
            let mut parsed = Vec::with_capacity(turns.len());
            for (i, turn) in turns.iter().enumerate() {
                let loc = Some(format!("{turns_field}[{i}]"));
                let role = text(field(turn, role_field, loc.clone())?, role_field)?;
                let content = text(field(turn, content_field, loc)?, content_field)?;
                parsed.push((role, content));
            }
            let mut iter = parsed.into_iter().enumerate().peekable();
            let instruction = match iter.peek() {
                Some((_, (role, _))) if role == user_role => iter.next().map(|(_, (_, c))| c).unwrap_or_default(),
                _ => String::new(),
            };
            let mut drafts = Vec::new();
            while let Some((i, (role, content))) = iter.next() {
                if role != *assistant_role {
                    continue;
                }
                let (thought, action) = split_thought_action(&content, thought_marker, action_marker);
                let observation = match iter.peek() {
                    Some((_, (next_role, next))) if next_role == user_role => {
                        let obs = next
                            .trim()
                            .strip_prefix(observation_prefix.as_str())
                            .unwrap_or(next.trim())
                            .trim()
                            .to_string();
                        iter.next();
                        Some(obs)
                    }
                    _ => None,
                };
                drafts.push(StepDraft {
                    thought,
                    action,
                    observation,
                    location: format!("{turns_field}[{i}]"),
                });
            }
            (instruction, drafts)
        }
        SourceLayout::StepFields {
            instruction_field,
            steps_field,
            thought_field,
            action_field,
            observation_field,
        } => {
            let instruction = text(field(&value, instruction_field, None)?, instruction_field)?;
            let steps = field(&value, steps_field, None)?
                .as_array()
                .ok_or(MappingError::WrongType {
                    field: steps_field.clone(),
                    expected: "array",
                })?;
            let mut drafts = Vec::with_capacity(steps.len());
            for (i, step) in steps.iter().enumerate() {
                let location = format!("{steps_field}[{i}]");
                let thought = match step.get(thought_field) {
                    Some(v) => text(v, thought_field)?,
                    None => String::new(),
                };
                let action = text(field(step, action_field, Some(location.clone()))?, action_field)?;
                let observation = step
                    .get(observation_field)
                    .map(|v| text(v, observation_field))
                    .transpose()?;
                drafts.push(StepDraft {
                    thought,
                    action,
                    observation,
                    location,
                });
            }
            (instruction, drafts)
        }
    };

    let observation_name = match &mapping.layout {
        SourceLayout::Conversation { .. } => "observation",
        SourceLayout::StepFields {
            observation_field, ..
        } => observation_field.as_str(),
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), "agentbank".to_string());
    metadata.insert("source_id".to_string(), id.clone());
    let mut steps = Vec::with_capacity(drafts.len());
    for (i, draft) in drafts.into_iter().enumerate() {
        let observation = match draft.observation {
            Some(o) => o,
            None if mapping.strict => {
                return Err(MappingError::MissingField {
                    field: observation_name.to_string(),
                    location: Some(draft.location),
                })
            }
            None => String::new(),
        };
        if draft.thought.is_empty() {
            metadata.insert(META_REASONING_ABSENT.to_string(), "true".to_string());
        }
        let raw = if draft.action.is_empty() {
            "<empty>".to_string()
        } else {
            draft.action
        };
        steps.push(Step::new(i + 1, draft.thought, Action::from_raw(raw), observation));
    }
    if steps.is_empty() {
        metadata.insert(META_DEGENERATE.to_string(), "true".to_string());
    }
    Ok(Trajectory {
        id,
        instruction,
        available_tools: Vec::new(),
        steps,
        domain: mapping.domain,
        task: mapping.task.clone(),
        metadata,
    })
}

struct StepDraft {
    thought: String,
    action: String,
    observation: Option<String>,
    location: String,
}

fn split_thought_action(content: &str, thought_marker: &str, action_marker: &str) -> (String, String) {
    match content.rfind(action_marker) {
        Some(pos) => {
            let before = content[..pos].trim();
            let thought = before.strip_prefix(thought_marker).unwrap_or(before).trim();
            let action = content[pos + action_marker.len()..].trim();
            (thought.to_string(), action.to_string())
        }
        None => (String::new(), content.trim().to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_TURNS: &str = r#"{"id": "alfworld_17", "conversations": [
        {"from": "human", "value": "Put a clean mug on the desk."},
        {"from": "gpt", "value": "Thought: The mug is probably on the counter.\nAction: go to countertop 1"},
        {"from": "human", "value": "Observation: On the countertop 1, you see a mug 1."},
        {"from": "gpt", "value": "Thought: I found the mug.\nAction: take mug 1 from countertop 1"},
        {"from": "human", "value": "Observation: You pick up the mug 1 from the countertop 1."},
        {"from": "gpt", "value": "Thought: Now clean it.\nAction: clean mug 1 with sinkbasin 1"},
        {"from": "human", "value": "Observation: You clean the mug 1 using the sinkbasin 1."}
    ]}"#;

    #[test]
    fn conversation_layout_matches_hand_conversion() {
        let mapping = FieldMapping::agentbank(Domain::Embodied, "alfworld");
        let t = import_agentbank_record(THREE_TURNS, &mapping).unwrap();
        // Converted by hand from the record above.
        let expected = [
            ("The mug is probably on the counter.", "go to countertop 1", "On the countertop 1, you see a mug 1."),
            ("I found the mug.", "take mug 1 from countertop 1", "You pick up the mug 1 from the countertop 1."),
            ("Now clean it.", "clean mug 1 with sinkbasin 1", "You clean the mug 1 using the sinkbasin 1."),
        ];
        assert_eq!(t.id, "alfworld_17");
        assert_eq!(t.instruction, "Put a clean mug on the desk.");
        assert_eq!(t.len(), 3);
        for (step, (thought, action, observation)) in t.steps.iter().zip(expected) {
            assert_eq!(step.thought, thought);
            assert_eq!(step.action.raw, action);
            assert_eq!(step.action.tool, action.split(' ').next().unwrap());
            assert_eq!(step.observation, observation);
        }
        assert_eq!(t.metadata["source"], "agentbank");
        assert!(!t.metadata.contains_key("verdict"));
        assert!(t.validate().is_ok());
    }

    #[test]
    fn strict_mapping_requires_observation() {
        let record = r#"{"id": 3, "conversations": [
            {"from": "human", "value": "Solve 2+2."},
            {"from": "gpt", "value": "Thought: easy.\nAction: calculate[2+2]"}
        ]}"#;
        let lenient = FieldMapping::agentbank(Domain::Math, "gsm8k");
        let t = import_agentbank_record(record, &lenient).unwrap();
        assert_eq!(t.steps[0].observation, "");
        assert_eq!(t.id, "3");

        let err = import_agentbank_record(record, &lenient.strict()).unwrap_err();
        assert_eq!(
            err,
            MappingError::MissingField {
                field: "observation".into(),
                location: Some("conversations[1]".into()),
            }
        );
    }

    #[test]
    fn step_fields_layout_missing_observation_under_strict() {
        let mapping = FieldMapping {
            id_field: "uid".into(),
            domain: Domain::Web,
            task: "webshop".into(),
            layout: SourceLayout::StepFields {
                instruction_field: "goal".into(),
                steps_field: "trace".into(),
                thought_field: "think".into(),
                action_field: "act".into(),
                observation_field: "obs".into(),
            },
            strict: true,
        };
        let ok = r#"{"uid": "w1", "goal": "buy shoes", "trace": [{"think": "search", "act": "search[shoes]", "obs": "results"}]}"#;
        assert_eq!(import_agentbank_record(ok, &mapping).unwrap().len(), 1);
        let missing = r#"{"uid": "w1", "goal": "buy shoes", "trace": [{"think": "search", "act": "search[shoes]"}]}"#;
        assert!(matches!(
            import_agentbank_record(missing, &mapping),
            Err(MappingError::MissingField { field, .. }) if field == "obs"
        ));
    }

    #[test]
    fn empty_conversation_is_degenerate() {
        let mapping = FieldMapping::agentbank(Domain::Reasoning, "hotpotqa");
        let t = import_agentbank_record(r#"{"id": "e", "conversations": []}"#, &mapping).unwrap();
        assert_eq!(t.len(), 0);
        assert_eq!(t.metadata[META_DEGENERATE], "true");
    }

    #[test]
    fn missing_turns_field_is_mapping_error() {
        let mapping = FieldMapping::agentbank(Domain::Reasoning, "hotpotqa");
        assert!(matches!(
            import_agentbank_record(r#"{"id": "e"}"#, &mapping),
            Err(MappingError::MissingField { field, .. }) if field == "conversations"
        ));
    }

    #[test]
    fn action_without_thought_flags_reasoning_absent() {
        let record = r#"{"id": "m", "conversations": [
            {"from": "human", "value": "q"},
            {"from": "gpt", "value": "Action: finish[4]"},
            {"from": "human", "value": "Observation: done"}
        ]}"#;
        let t = import_agentbank_record(record, &FieldMapping::agentbank(Domain::Math, "gsm8k")).unwrap();
        assert_eq!(t.steps[0].thought, "");
        assert_eq!(t.metadata[META_REASONING_ABSENT], "true");
        assert!(t.validate().is_ok());
    }
}
