use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trajectory::Verdict;
use crate::verifier::{DiagnosticReport, ParseMode};

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_content: Option<String>,
}

impl Prediction {
    pub fn from_report(id: impl Into<String>, report: &DiagnosticReport) -> Self {
        Prediction {
            id: id.into(),
            verdict: report.verdict,
            error_step: report.error_step,
            error_content: report.error_content.clone(),
        }
    }

    pub fn into_report(self) -> DiagnosticReport {
        DiagnosticReport {
            verdict: self.verdict,
            error_step: self.error_step,
            error_content: self.error_content,
            raw_output: String::new(),
            parse_mode: ParseMode::Strict,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictionsError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate prediction for id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a predictions file into reports keyed by id. Blank lines are skipped.
pub fn read_predictions(
    path: impl AsRef<Path>,
) -> Result<HashMap<String, DiagnosticReport>, PredictionsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pred: Prediction =
            serde_json::from_str(&line).map_err(|source| PredictionsError::Json {
                line: i + 1,
                source,
            })?;
        let id = pred.id.clone();
        if out.insert(id.clone(), pred.into_report()).is_some() {
            return Err(PredictionsError::DuplicateId(id));
        }
    }
    Ok(out)
}

/// Writes predictions one per line, in the given order.
pub fn write_predictions<'a>(
    path: impl AsRef<Path>,
    preds: impl IntoIterator<Item = &'a Prediction>,
) -> Result<(), PredictionsError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in preds {
        let line = serde_json::to_string(p).expect("prediction serializes");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
