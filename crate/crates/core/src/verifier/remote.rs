use std::sync::Arc;

use super::{build_audit_prompt, parse_report, DiagnosticReport, PromptTemplate, Verifier, VerifierError};
use crate::gateway::{ChatBackend, ChatRequest};
use crate::trajectory::Trajectory;

/// Prompt, call, parse. The raw completion is kept on the report.
pub fn remote_verify(
    trajectory: &Trajectory,
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
) -> Result<DiagnosticReport, VerifierError> {
    let prompt = build_audit_prompt(trajectory, template);
    let request = ChatRequest::new(prompt.messages());
    let raw = backend.complete(&request)?;
    Ok(parse_report(&raw))
}

pub struct RemoteVerifier {
    backend: Arc<dyn ChatBackend>,
    template: PromptTemplate,
}

impl RemoteVerifier {
    pub fn new(backend: Arc<dyn ChatBackend>, template: PromptTemplate) -> Self {
        RemoteVerifier { backend, template }
    }
}

impl Verifier for RemoteVerifier {
    fn verify(&self, trajectory: &Trajectory) -> Result<DiagnosticReport, VerifierError> {
        remote_verify(trajectory, self.backend.as_ref(), &self.template)
    }
}
