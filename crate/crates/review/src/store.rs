//! The verdict log and the state folded from it.
//!
//! Every change is one JSON line appended to the log before it takes effect in memory, so
//! reopening the log rebuilds exactly the state that was served.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use trajaudit::ratio::Rate;
use trajaudit::trajectory::serialize_trajectory;
use trajaudit::{AnomalyLabel, Dataset, Verdict};

use crate::sampling::{dataset_digest, ReviewSet};
use crate::ReviewError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanVerdict {
    pub set_id: String,
    pub sample_id: String,
    pub annotator_id: String,
    pub category_agrees: bool,
    /// `None` when the ground truth is Normal: there is no step to agree with.
    pub localization_agrees: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub timestamp_ms: u64,
}

/// A verdict as submitted, before the service stamps and normalizes it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSubmission {
    pub set_id: String,
    pub sample_id: String,
    pub annotator_id: String,
    pub category_agrees: bool,
    #[serde(default)]
    pub localization_agrees: Option<bool>,
    #[serde(default)]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub set_id: String,
    pub verdicts: u64,
    pub classification: Rate,
    pub localization: Rate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleView {
    pub sample_id: String,
    /// 1-based position in the set.
    pub position: usize,
    pub trajectory: serde_json::Value,
    pub label: AnomalyLabel,
    pub rendered: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextSample {
    pub set_id: String,
    pub annotator_id: String,
    /// Samples in the set this annotator has not reviewed, the served one included.
    pub remaining: usize,
    pub sample: Option<SampleView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SetCreated { set: ReviewSet },
    AnnotatorIssued { annotator_id: String, name: Option<String> },
    Verdict { verdict: HumanVerdict },
}

pub struct ReviewStore {
    dataset: Dataset,
    digest: String,
    path: PathBuf,
    log: File,
    sets: BTreeMap<String, ReviewSet>,
    annotators: BTreeMap<String, Option<String>>,
    verdicts: Vec<HumanVerdict>,
    reviewed: BTreeSet<(String, String)>,
}

impl std::fmt::Debug for ReviewStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewStore")
            .field("path", &self.path)
            .field("sets", &self.sets.len())
            .field("verdicts", &self.verdicts.len())
            .finish()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl ReviewStore {
    /// Opens (or creates) the log at `path` and replays it. A final line cut off by a crash
    /// is dropped.
    pub fn open(path: impl AsRef<Path>, dataset: Dataset) -> Result<Self, ReviewError> {
        let path = path.as_ref().to_path_buf();
        let mut events = Vec::new();
        let mut keep = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    break;
                }
                number += 1;
                if !line.ends_with('\n') {
                    tracing::warn!(line = number, "dropping truncated verdict log line");
                    break;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| ReviewError::CorruptLog {
                    line: number,
                    message: e.to_string(),
                })?;
                events.push((number, event));
                keep += line.len() as u64;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        if log.metadata()?.len() != keep {
            log.set_len(keep)?;
        }
        let mut store = ReviewStore {
            digest: dataset_digest(&dataset),
            dataset,
            path,
            log,
            sets: BTreeMap::new(),
            annotators: BTreeMap::new(),
            verdicts: Vec::new(),
            reviewed: BTreeSet::new(),
        };
        for (line, event) in events {
            store.check(&event).map_err(|e| match e {
                ReviewError::DatasetMismatch { .. } => e,
                other => ReviewError::CorruptLog {
                    line,
                    message: other.to_string(),
                },
            })?;
            store.apply(event);
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn dataset_digest(&self) -> &str {
        &self.digest
    }

    pub fn set(&self, id: &str) -> Result<&ReviewSet, ReviewError> {
        self.sets.get(id).ok_or_else(|| ReviewError::UnknownSet(id.to_string()))
    }

    /// Recorded verdicts, in log order.
    pub fn verdicts(&self) -> &[HumanVerdict] {
        &self.verdicts
    }

    fn check(&self, event: &Event) -> Result<(), ReviewError> {
        match event {
            Event::SetCreated { set } => {
                if set.created_from != self.digest {
                    return Err(ReviewError::DatasetMismatch {
                        set_id: set.id.clone(),
                        expected: set.created_from.clone(),
                        found: self.digest.clone(),
                    });
                }
                Ok(())
            }
            Event::AnnotatorIssued { .. } => Ok(()),
            Event::Verdict { verdict } => {
                let set = self.set(&verdict.set_id)?;
                if !set.sample_ids.contains(&verdict.sample_id) {
                    return Err(ReviewError::UnknownSample {
                        set_id: set.id.clone(),
                        sample_id: verdict.sample_id.clone(),
                    });
                }
                if !self.annotators.contains_key(&verdict.annotator_id) {
                    return Err(ReviewError::UnknownAnnotator(verdict.annotator_id.clone()));
                }
                if self
                    .reviewed
                    .contains(&(verdict.sample_id.clone(), verdict.annotator_id.clone()))
                {
                    return Err(ReviewError::DuplicateVerdict {
                        sample_id: verdict.sample_id.clone(),
                        annotator_id: verdict.annotator_id.clone(),
                    });
                }
                Ok(())
            }
        }
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::SetCreated { set } => {
                self.sets.insert(set.id.clone(), set);
            }
            Event::AnnotatorIssued { annotator_id, name } => {
                self.annotators.insert(annotator_id, name);
            }
            Event::Verdict { verdict } => {
                self.reviewed
                    .insert((verdict.sample_id.clone(), verdict.annotator_id.clone()));
                self.verdicts.push(verdict);
            }
        }
    }

    fn commit(&mut self, event: Event) -> Result<(), ReviewError> {
        self.check(&event)?;
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()?;
        self.apply(event);
        Ok(())
    }

    /// Registers a set. Creating a set that already exists returns it unchanged.
    pub fn create_set(&mut self, set: ReviewSet) -> Result<ReviewSet, ReviewError> {
        if let Some(existing) = self.sets.get(&set.id) {
            return Ok(existing.clone());
        }
        self.commit(Event::SetCreated { set: set.clone() })?;
        Ok(set)
    }

    /// Issues a fresh opaque annotator id.
    pub fn issue_annotator(&mut self, name: Option<String>) -> Result<String, ReviewError> {
        let annotator_id = format!("ann-{:04}", self.annotators.len() + 1);
        self.commit(Event::AnnotatorIssued {
            annotator_id: annotator_id.clone(),
            name,
        })?;
        Ok(annotator_id)
    }

    /// Appends a verdict. Localization is forced to `None` on Normal ground truth and
    /// required otherwise.
    pub fn record_verdict(&mut self, submission: VerdictSubmission) -> Result<HumanVerdict, ReviewError> {
        let set = self.set(&submission.set_id)?;
        let Some(item) = set
            .sample_ids
            .contains(&submission.sample_id)
            .then(|| self.dataset.get(&submission.sample_id))
            .flatten()
        else {
            return Err(ReviewError::UnknownSample {
                set_id: submission.set_id,
                sample_id: submission.sample_id,
            });
        };
        let localization_agrees = match item.label.verdict {
            Verdict::Normal => None,
            Verdict::Anomaly => Some(
                submission
                    .localization_agrees
                    .ok_or_else(|| ReviewError::MissingLocalization(submission.sample_id.clone()))?,
            ),
        };
        let verdict = HumanVerdict {
            set_id: submission.set_id,
            sample_id: submission.sample_id,
            annotator_id: submission.annotator_id,
            category_agrees: submission.category_agrees,
            localization_agrees,
            comment: submission.comment,
            timestamp_ms: now_ms(),
        };
        self.commit(Event::Verdict {
            verdict: verdict.clone(),
        })?;
        Ok(verdict)
    }

    pub fn next_sample(&self, set_id: &str, annotator_id: &str) -> Result<NextSample, ReviewError> {
        let set = self.set(set_id)?;
        if !self.annotators.contains_key(annotator_id) {
            return Err(ReviewError::UnknownAnnotator(annotator_id.to_string()));
        }
        let pending: Vec<(usize, &String)> = set
            .sample_ids
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                !self
                    .reviewed
                    .contains(&((*s).clone(), annotator_id.to_string()))
            })
            .collect();
        let sample = pending.first().map(|&(i, id)| {
            let item = self.dataset.get(id).expect("set samples are in the dataset");
            SampleView {
                sample_id: id.clone(),
                position: i + 1,
                trajectory: serde_json::from_str(&serialize_trajectory(item)).expect("record is JSON"),
                label: item.label.clone(),
                rendered: render(item),
            }
        });
        Ok(NextSample {
            set_id: set_id.to_string(),
            annotator_id: annotator_id.to_string(),
            remaining: pending.len(),
            sample,
        })
    }

    /// Agreement over every verdict recorded for the set.
    pub fn stats(&self, set_id: &str) -> Result<AgreementStats, ReviewError> {
        self.set(set_id)?;
        agreement_stats(set_id, &self.verdicts)
    }
}

/// A fold over the log: category agreement over all verdicts, localization agreement over
/// the verdicts where it applies.
pub fn agreement_stats(set_id: &str, verdicts: &[HumanVerdict]) -> Result<AgreementStats, ReviewError> {
    let (mut total, mut category, mut applicable, mut located) = (0, 0, 0, 0);
    for v in verdicts.iter().filter(|v| v.set_id == set_id) {
        total += 1;
        category += u64::from(v.category_agrees);
        if let Some(agrees) = v.localization_agrees {
            applicable += 1;
            located += u64::from(agrees);
        }
    }
    if total == 0 {
        return Err(ReviewError::EmptySet(set_id.to_string()));
    }
    Ok(AgreementStats {
        set_id: set_id.to_string(),
        verdicts: total,
        classification: Rate::new(category, total),
        localization: Rate::new(located, applicable),
    })
}

fn render(item: &trajaudit::LabeledTrajectory) -> String {
    let t = &item.trajectory;
    let mut out = format!("Task: {}\n", t.instruction);
    for s in &t.steps {
        out.push_str(&format!(
            "\nStep {}\nThought: {}\nAction: {}\nObservation: {}\n",
            s.index, s.thought, s.action.raw, s.observation
        ));
    }
    let label = &item.label;
    match (label.verdict, label.anomaly_type, label.first_error_step) {
        (Verdict::Anomaly, Some(ty), Some(step)) => out.push_str(&format!(
            "\nSynthesized label: Anomaly ({}) at step {step}: {}\n",
            ty.code(),
            label.error_content.as_deref().unwrap_or("")
        )),
        _ => out.push_str("\nSynthesized label: Normal\n"),
    }
    out
}
