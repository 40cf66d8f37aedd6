//! Audit prompt templates.
//!
//! A template file has four sections, each introduced by a line `@@ <name>`: `system`,
//! `trajectory` (placeholders `{instruction}`, `{tools}`, `{n}`), `step` (placeholders
//! `{index}`, `{thought}`, `{action}`, `{observation}`) and `request`. `{{` and `}}` produce
//! literal braces. Free-text values are inserted JSON-quoted so that no step content can
//! forge a step boundary.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::gateway::ChatMessage;
use crate::trajectory::Trajectory;

pub const DEFAULT_TEMPLATE: &str = include_str!("../../templates/audit_v1.txt");

const SECTIONS: [(&str, &[&str]); 4] = [
    ("system", &[]),
    ("trajectory", &["instruction", "tools", "n"]),
    ("step", &["index", "thought", "action", "observation"]),
    ("request", &["n"]),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("section `{section}`: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { section: String, name: String },
    #[error("section `{section}`: unbalanced brace at byte {offset}")]
    UnbalancedBrace { section: String, offset: usize },
    #[error("unknown section `{0}`")]
    UnknownSection(String),
    #[error("missing section `{0}`")]
    MissingSection(String),
}

enum Piece {
    Text(String),
    Slot(String),
}

fn tokenize(section: &str, body: &str) -> Result<Vec<Piece>, TemplateError> {
    let allowed = SECTIONS
        .iter()
        .find(|(name, _)| *name == section)
        .map(|(_, p)| *p)
        .unwrap_or(&[]);
    let unbalanced = |offset| TemplateError::UnbalancedBrace {
        section: section.to_string(),
        offset,
    };
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|p| p.1) == Some('{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek().map(|p| p.1) == Some('}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let rest = &body[i + 1..];
                let end = rest.find('}').ok_or_else(|| unbalanced(i))?;
                let name = &rest[..end];
                if !allowed.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder {
                        section: section.to_string(),
                        name: name.to_string(),
                    });
                }
                pieces.push(Piece::Text(std::mem::take(&mut text)));
                pieces.push(Piece::Slot(name.to_string()));
                for _ in 0..name.chars().count() + 1 {
                    chars.next();
                }
            }
            '}' => return Err(unbalanced(i)),
            c => text.push(c),
        }
    }
    pieces.push(Piece::Text(text));
    Ok(pieces)
}

fn fill(pieces: &[Piece], values: &BTreeMap<&str, String>) -> String {
    let mut out = String::new();
    for p in pieces {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => out.push_str(&values[name.as_str()]),
        }
    }
    out
}

/// A parsed template. Parsing checks every placeholder, so rendering cannot fail.
pub struct PromptTemplate {
    system: Vec<Piece>,
    trajectory: Vec<Piece>,
    step: Vec<Piece>,
    request: Vec<Piece>,
}

impl std::fmt::Debug for PromptTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PromptTemplate").finish_non_exhaustive()
    }
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut bodies: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in source.lines() {
            if let Some(name) = line.strip_prefix("@@ ") {
                let name = name.trim().to_string();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(TemplateError::UnknownSection(name));
                }
                bodies.insert(name.clone(), String::new());
                current = Some(name);
            } else if let Some(name) = &current {
                let body = bodies.get_mut(name).expect("section registered");
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut take = |name: &str| -> Result<Vec<Piece>, TemplateError> {
            let body = bodies
                .remove(name)
                .ok_or_else(|| TemplateError::MissingSection(name.to_string()))?;
            tokenize(name, body.trim_end_matches('\n'))
        };
        Ok(PromptTemplate {
            system: take("system")?,
            trajectory: take("trajectory")?,
            step: take("step")?,
            request: take("request")?,
        })
    }

    pub fn default_v1() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditPrompt {
    pub system_instruction: String,
    pub rendered_trajectory: String,
    pub token_estimate: usize,
}

impl AuditPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(&self.system_instruction),
            ChatMessage::user(&self.rendered_trajectory),
        ]
    }
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Renders the trajectory with one `Step k` header line per step.
pub fn build_audit_prompt(trajectory: &Trajectory, template: &PromptTemplate) -> AuditPrompt {
    let system = fill(&template.system, &BTreeMap::new());
    let n = trajectory.len().to_string();
    let tools = trajectory
        .available_tools
        .iter()
        .map(|t| t.signature.as_str())
        .collect::<Vec<_>>();
    let header = BTreeMap::from([
        ("instruction", quoted(&trajectory.instruction)),
        ("tools", serde_json::to_string(&tools).expect("tools serialize")),
        ("n", n.clone()),
    ]);
    let mut body = fill(&template.trajectory, &header);
    body.push_str("\n\n");
    for step in &trajectory.steps {
        let values = BTreeMap::from([
            ("index", step.index.to_string()),
            ("thought", quoted(&step.thought)),
            ("action", quoted(&step.action.raw)),
            ("observation", quoted(&step.observation)),
        ]);
        let _ = writeln!(body, "Step {}", step.index);
        body.push_str(&fill(&template.step, &values));
        body.push_str("\n\n");
    }
    body.push_str(&fill(&template.request, &BTreeMap::from([("n", n)])));
    let token_estimate = (system.chars().count() + body.chars().count()).div_ceil(4);
    AuditPrompt {
        system_instruction: system,
        rendered_trajectory: body,
        token_estimate,
    }
}
