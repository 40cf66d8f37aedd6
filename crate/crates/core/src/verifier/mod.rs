//! Verifiers map a trajectory to a diagnostic report: a verdict, the first anomalous step,
//! and a description of the error.

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;
use crate::trajectory::{AnomalyLabel, Trajectory, Verdict};

mod oracle;
mod parse;
mod prompt;
mod remote;
pub mod rules;

pub use oracle::{oracle_verify, OracleVerifier};
pub use parse::{parse_report, strict_render};
pub use prompt::{build_audit_prompt, AuditPrompt, PromptTemplate, TemplateError, DEFAULT_TEMPLATE};
pub use remote::{remote_verify, RemoteVerifier};
pub use rules::{rule_verify, RuleSet, RuleVerifier, StateTracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    Lenient,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_content: Option<String>,
    #[serde(default)]
    pub raw_output: String,
    pub parse_mode: ParseMode,
}

impl DiagnosticReport {
    pub fn normal(raw_output: impl Into<String>) -> Self {
        DiagnosticReport {
            verdict: Verdict::Normal,
            error_step: None,
            error_content: None,
            raw_output: raw_output.into(),
            parse_mode: ParseMode::Strict,
        }
    }

    pub fn anomaly(step: usize, content: impl Into<String>) -> Self {
        DiagnosticReport {
            verdict: Verdict::Anomaly,
            error_step: Some(step),
            error_content: Some(content.into()),
            raw_output: String::new(),
            parse_mode: ParseMode::Strict,
        }
    }

    pub fn failed(raw_output: impl Into<String>) -> Self {
        DiagnosticReport {
            parse_mode: ParseMode::Failed,
            ..DiagnosticReport::normal(raw_output)
        }
    }

    /// The report a perfect verifier would give for `label`.
    pub fn from_label(label: &AnomalyLabel) -> Self {
        match label.verdict {
            Verdict::Normal => DiagnosticReport::normal(""),
            Verdict::Anomaly => DiagnosticReport {
                verdict: Verdict::Anomaly,
                error_step: label.first_error_step,
                error_content: label.error_content.clone(),
                raw_output: String::new(),
                parse_mode: ParseMode::Strict,
            },
        }
    }

    pub fn is_anomaly(&self) -> bool {
        self.verdict == Verdict::Anomaly
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifierError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

pub trait Verifier: Send + Sync {
    fn verify(&self, trajectory: &Trajectory) -> Result<DiagnosticReport, VerifierError>;
}

impl<F> Verifier for F
where
    F: Fn(&Trajectory) -> DiagnosticReport + Send + Sync,
{
    fn verify(&self, trajectory: &Trajectory) -> Result<DiagnosticReport, VerifierError> {
        Ok(self(trajectory))
    }
}
