use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{LabeledTrajectory, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("duplicate trajectory id {0:?}")]
    DuplicateId(String),
    #[error("item {id}: {message}")]
    InvalidItem { id: String, message: String },
}

/// Counts over a dataset. Always equal to a recount of the items it was built from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub total: usize,
    pub by_domain: BTreeMap<String, usize>,
    pub by_task: BTreeMap<String, usize>,
    pub by_verdict: BTreeMap<String, usize>,
    pub by_anomaly_type: BTreeMap<String, usize>,
    /// Labeling conventions the dataset was produced under.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub conventions: BTreeMap<String, String>,
}

impl Manifest {
    fn recount(items: &[LabeledTrajectory], conventions: BTreeMap<String, String>) -> Self {
        let mut m = Manifest {
            total: items.len(),
            conventions,
            ..Manifest::default()
        };
        for item in items {
            let t = &item.trajectory;
            *m.by_domain.entry(t.domain.to_string()).or_default() += 1;
            *m.by_task.entry(t.task.clone()).or_default() += 1;
            *m.by_verdict
                .entry(item.label.verdict.to_string())
                .or_default() += 1;
            if let Some(kind) = item.label.anomaly_type {
                *m.by_anomaly_type.entry(kind.to_string()).or_default() += 1;
            }
        }
        m
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.by_verdict.get(verdict.as_str()).copied().unwrap_or(0)
    }

    /// Counts only, ignoring conventions.
    pub fn same_counts(&self, other: &Manifest) -> bool {
        self.total == other.total
            && self.by_domain == other.by_domain
            && self.by_task == other.by_task
            && self.by_verdict == other.by_verdict
            && self.by_anomaly_type == other.by_anomaly_type
    }
}

/// A collection of labeled trajectories with unique ids and a manifest kept in sync.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    items: Vec<LabeledTrajectory>,
    manifest: Manifest,
}

impl Dataset {
    pub fn new(items: Vec<LabeledTrajectory>) -> Result<Self, DatasetError> {
        Self::with_conventions(items, BTreeMap::new())
    }

    pub fn with_conventions(
        items: Vec<LabeledTrajectory>,
        conventions: BTreeMap<String, String>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item.id()) {
                return Err(DatasetError::DuplicateId(item.id().to_string()));
            }
            item.validate().map_err(|v| DatasetError::InvalidItem {
                id: item.id().to_string(),
                message: v.to_string(),
            })?;
        }
        let manifest = Manifest::recount(&items, conventions);
        Ok(Dataset { items, manifest })
    }

    pub fn items(&self) -> &[LabeledTrajectory] {
        &self.items
    }

    pub fn into_items(self) -> Vec<LabeledTrajectory> {
        self.items
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledTrajectory> {
        self.items.iter().find(|i| i.id() == id)
    }

    pub fn push(&mut self, item: LabeledTrajectory) -> Result<(), DatasetError> {
        if self.items.iter().any(|i| i.id() == item.id()) {
            return Err(DatasetError::DuplicateId(item.id().to_string()));
        }
        item.validate().map_err(|v| DatasetError::InvalidItem {
            id: item.id().to_string(),
            message: v.to_string(),
        })?;
        self.items.push(item);
        self.manifest = Manifest::recount(&self.items, std::mem::take(&mut self.manifest.conventions));
        Ok(())
    }

    /// Keeps only items matching `keep`; the manifest is recounted.
    pub fn retain(&mut self, keep: impl FnMut(&LabeledTrajectory) -> bool) {
        self.items.retain(keep);
        self.manifest = Manifest::recount(&self.items, std::mem::take(&mut self.manifest.conventions));
    }

    pub fn conventions(&self) -> &BTreeMap<String, String> {
        &self.manifest.conventions
    }

    /// Recomputes the manifest from scratch; used to check soundness.
    pub fn recount(&self) -> Manifest {
        Manifest::recount(&self.items, self.manifest.conventions.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Action, AnomalyLabel, AnomalyType, Domain, Step, Trajectory};

    fn item(id: &str, task: &str, anomaly: bool) -> LabeledTrajectory {
        let trajectory = Trajectory {
            id: id.into(),
            instruction: "i".into(),
            available_tools: vec![],
            steps: vec![Step::new(1, "t", Action::from_raw("a()"), "o")],
            domain: Domain::Math,
            task: task.into(),
            metadata: Default::default(),
        };
        let label = if anomaly {
            AnomalyLabel::anomaly(AnomalyType::ReasoningError, 1, "c", Some("g".into()))
        } else {
            AnomalyLabel::normal()
        };
        LabeledTrajectory { trajectory, label }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = Dataset::new(vec![item("a", "gsm8k", false), item("a", "gsm8k", true)])
            .unwrap_err();
        assert_eq!(err, DatasetError::DuplicateId("a".into()));
    }

    #[test]
    fn manifest_tracks_mutations() {
        let mut ds = Dataset::new(vec![item("a", "gsm8k", false)]).unwrap();
        ds.push(item("b", "mathqa", true)).unwrap();
        assert_eq!(ds.manifest().total, 2);
        assert_eq!(ds.manifest().count(Verdict::Anomaly), 1);
        assert_eq!(ds.manifest().by_anomaly_type["I.a"], 1);
        assert_eq!(ds.manifest(), &ds.recount());
        ds.retain(|i| i.id() != "a");
        assert_eq!(ds.manifest().count(Verdict::Normal), 0);
        assert_eq!(ds.manifest(), &ds.recount());
        assert!(ds.push(item("b", "x", false)).is_err());
    }
}
