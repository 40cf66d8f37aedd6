use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnomalyLabel, Domain, LabeledTrajectory, Step, ToolDescriptor, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("schema error in record {}: field `{field}`: {message}", id.as_deref().unwrap_or("<unknown>"))]
    Schema {
        id: Option<String>,
        field: String,
        message: String,
    },
    #[error("invariant violated in record {}: field `{field}`: {message}", id.as_deref().unwrap_or("<unknown>"))]
    Invariant {
        id: Option<String>,
        field: String,
        message: String,
    },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<ParseError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// On-disk record. Field order here is the serialized key order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    domain: Domain,
    task: String,
    instruction: String,
    tools: Vec<ToolDescriptor>,
    steps: Vec<Step>,
    label: AnomalyLabel,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl From<LabeledTrajectory> for Record {
    fn from(item: LabeledTrajectory) -> Self {
        let t = item.trajectory;
        Record {
            id: t.id,
            domain: t.domain,
            task: t.task,
            instruction: t.instruction,
            tools: t.available_tools,
            steps: t.steps,
            label: item.label,
            metadata: t.metadata,
        }
    }
}

impl From<Record> for LabeledTrajectory {
    fn from(r: Record) -> Self {
        LabeledTrajectory {
            trajectory: Trajectory {
                id: r.id,
                instruction: r.instruction,
                available_tools: r.tools,
                steps: r.steps,
                domain: r.domain,
                task: r.task,
                metadata: r.metadata,
            },
            label: r.label,
        }
    }
}

/// Parses and validates one JSONL record.
pub fn parse_trajectory_line(line: &str) -> Result<LabeledTrajectory, ParseError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ParseError::Schema {
        id: None,
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    let id = value
        .get("id")
        .and_then(|v| v.as_str())
        .map(str::to_string);
    let record: Record = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // Missing fields are reported against the containing object; name the field itself.
        let field = match missing_field_name(&inner) {
            Some(name) if path == "." => name.to_string(),
            Some(name) => format!("{path}.{name}"),
            None => path,
        };
        ParseError::Schema {
            id: id.clone(),
            field,
            message: inner,
        }
    })?;
    let item = LabeledTrajectory::from(record);
    item.validate().map_err(|v| ParseError::Invariant {
        id: id.clone(),
        field: v.field,
        message: v.message,
    })?;
    Ok(item)
}

fn missing_field_name(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Serializes one item as a single JSONL line (no trailing newline).
pub fn serialize_trajectory(item: &LabeledTrajectory) -> String {
    serde_json::to_string(&Record::from(item.clone())).expect("record serialization is infallible")
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledTrajectory>, ParseError> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_trajectory_line(&line).map_err(|e| ParseError::AtLine {
            line: number + 1,
            source: Box::new(e),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_jsonl<'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = &'a LabeledTrajectory>,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        out.write_all(serialize_trajectory(item).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
