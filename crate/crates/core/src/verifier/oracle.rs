use super::{DiagnosticReport, Verifier, VerifierError};
use crate::trajectory::{LabeledTrajectory, Step, Trajectory, Verdict};

/// The report a perfect verifier gives for a labeled item.
pub fn oracle_verify(item: &LabeledTrajectory) -> DiagnosticReport {
    DiagnosticReport::from_label(&item.label)
}

/// Flags a trajectory when it reproduces a known anomalous item up to and including the
/// item's first error step. The instruction and tools must match too, and steps are
/// compared on thought, action and observation.
#[derive(Debug, Clone, Default)]
pub struct OracleVerifier {
    known: Vec<LabeledTrajectory>,
}

fn same_step(a: &Step, b: &Step) -> bool {
    a.thought == b.thought && a.action.raw == b.action.raw && a.observation == b.observation
}

impl OracleVerifier {
    pub fn new(items: impl IntoIterator<Item = LabeledTrajectory>) -> Self {
        OracleVerifier {
            known: items
                .into_iter()
                .filter(|i| i.label.verdict == Verdict::Anomaly)
                .collect(),
        }
    }

    pub fn report_for(&self, trajectory: &Trajectory) -> DiagnosticReport {
        self.known
            .iter()
            .filter_map(|item| {
                let l = item.label.first_error_step?;
                let matches = trajectory.instruction == item.trajectory.instruction
                    && trajectory.available_tools == item.trajectory.available_tools
                    && trajectory.len() >= l
                    && trajectory.steps[..l]
                        .iter()
                        .zip(&item.trajectory.steps[..l])
                        .all(|(a, b)| same_step(a, b));
                matches.then(|| oracle_verify(item))
            })
            .min_by_key(|r| r.error_step)
            .unwrap_or_else(|| DiagnosticReport::normal(""))
    }
}

impl Verifier for OracleVerifier {
    fn verify(&self, trajectory: &Trajectory) -> Result<DiagnosticReport, VerifierError> {
        Ok(self.report_for(trajectory))
    }
}
