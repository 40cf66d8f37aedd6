use super::{PerturbationSpec, META_SOURCE_ID};
use crate::trajectory::{AnomalyLabel, AnomalyType, LabeledTrajectory, Trajectory};

/// The step where the anomaly begins. Insertions start one step after `t`.
pub fn first_error_step(spec: &PerturbationSpec) -> usize {
    match spec.anomaly_type {
        AnomalyType::Inefficiency => spec.target_step + 1,
        _ => spec.target_step,
    }
}

/// Labels a completed trajectory. The source id is read from its metadata.
pub fn annotate(
    completed: Trajectory,
    spec: &PerturbationSpec,
    error_content: impl Into<String>,
) -> LabeledTrajectory {
    let source_id = completed.metadata.get(META_SOURCE_ID).cloned();
    let label = AnomalyLabel::anomaly(
        spec.anomaly_type,
        first_error_step(spec),
        error_content,
        source_id,
    );
    LabeledTrajectory {
        trajectory: completed,
        label,
    }
}
