use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajaudit::rng::unit_rng;
use trajaudit::trajectory::serialize_trajectory;
use trajaudit::{Dataset, Domain, Verdict};

use crate::ReviewError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewSet {
    pub id: String,
    pub sample_ids: Vec<String>,
    pub per_domain_quota: usize,
    /// Digest of the dataset the samples were drawn from.
    pub created_from: String,
    /// `None` for sets given as an explicit list.
    pub seed: Option<u64>,
}

/// SHA-256 over the dataset's JSONL serialization.
pub fn dataset_digest(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for item in dataset.items() {
        h.update(serialize_trajectory(item).as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn set_id(parts: &[&str]) -> String {
    let digest = Sha256::digest(parts.join("\u{1f}").as_bytes());
    format!("rs-{}", &hex::encode(digest)[..12])
}

/// Draws `per_domain` anomalous samples from every domain, uniformly without replacement.
/// Samples are ordered by domain, then by draw.
pub fn stratified_sample(dataset: &Dataset, per_domain: usize, seed: u64) -> Result<ReviewSet, ReviewError> {
    let mut sample_ids = Vec::with_capacity(per_domain * Domain::ALL.len());
    for domain in Domain::ALL {
        let pool: Vec<&str> = dataset
            .items()
            .iter()
            .filter(|i| i.trajectory.domain == domain && i.label.verdict == Verdict::Anomaly)
            .map(|i| i.id())
            .collect();
        if pool.len() < per_domain {
            return Err(ReviewError::InsufficientSamples {
                domain,
                available: pool.len(),
                required: per_domain,
            });
        }
        let mut rng = unit_rng(seed, domain.as_str());
        sample_ids.extend(
            index::sample(&mut rng, pool.len(), per_domain)
                .into_iter()
                .map(|i| pool[i].to_string()),
        );
    }
    let created_from = dataset_digest(dataset);
    Ok(ReviewSet {
        id: set_id(&[&created_from, &seed.to_string(), &per_domain.to_string()]),
        sample_ids,
        per_domain_quota: per_domain,
        created_from,
        seed: Some(seed),
    })
}

/// A set over hand-picked samples, normal ones included.
pub fn explicit_set(dataset: &Dataset, sample_ids: Vec<String>) -> Result<ReviewSet, ReviewError> {
    let created_from = dataset_digest(dataset);
    let mut parts = vec!["explicit", created_from.as_str()];
    parts.extend(sample_ids.iter().map(String::as_str));
    let id = set_id(&parts);
    let mut seen = std::collections::BTreeSet::new();
    if let Some(bad) = sample_ids
        .iter()
        .find(|s| dataset.get(s).is_none() || !seen.insert(s.as_str()))
    {
        return Err(ReviewError::UnknownSample {
            set_id: id,
            sample_id: bad.clone(),
        });
    }
    Ok(ReviewSet {
        id,
        sample_ids,
        per_domain_quota: 0,
        created_from,
        seed: None,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use trajaudit::{Action, AnomalyLabel, AnomalyType, LabeledTrajectory, Step, Trajectory};

    /// `anomalies` anomalous and as many normal items per domain.
    pub(crate) fn dataset(anomalies: usize) -> Dataset {
        let mut items = Vec::new();
        for domain in Domain::ALL {
            for i in 0..anomalies {
                for anomalous in [false, true] {
                    let trajectory = Trajectory {
                        id: format!("{}-{i}-{anomalous}", domain.as_str()),
                        instruction: "do it".into(),
                        available_tools: vec![],
                        steps: (1..=3).map(|s| Step::new(s, "t", Action::from_raw("a"), "o")).collect(),
                        domain,
                        task: domain.as_str().to_lowercase(),
                        metadata: Default::default(),
                    };
                    let label = if anomalous {
                        AnomalyLabel::anomaly(AnomalyType::ReasoningError, 2, "bad step", None)
                    } else {
                        AnomalyLabel::normal()
                    };
                    items.push(LabeledTrajectory { trajectory, label });
                }
            }
        }
        Dataset::new(items).unwrap()
    }

    #[test]
    fn quota_per_domain() {
        let ds = dataset(120);
        let set = stratified_sample(&ds, 100, 1).unwrap();
        assert_eq!(set.sample_ids.len(), 500);
        for domain in Domain::ALL {
            let n = set
                .sample_ids
                .iter()
                .filter(|id| ds.get(id).unwrap().trajectory.domain == domain)
                .count();
            assert_eq!(n, 100);
        }
        assert!(set.sample_ids.iter().all(|id| ds.get(id).unwrap().label.verdict == Verdict::Anomaly));
        let unique: std::collections::BTreeSet<_> = set.sample_ids.iter().collect();
        assert_eq!(unique.len(), 500);
    }

    #[test]
    fn zero_quota_is_empty() {
        let set = stratified_sample(&dataset(3), 0, 1).unwrap();
        assert!(set.sample_ids.is_empty());
    }

    #[test]
    fn short_domain_is_named() {
        let err = stratified_sample(&dataset(50), 100, 1).unwrap_err();
        assert!(matches!(
            err,
            ReviewError::InsufficientSamples { domain: Domain::Math, available: 50, required: 100 }
        ));
    }

    #[test]
    fn same_inputs_same_set() {
        let ds = dataset(20);
        assert_eq!(stratified_sample(&ds, 5, 9).unwrap(), stratified_sample(&ds, 5, 9).unwrap());
        assert_ne!(
            stratified_sample(&ds, 5, 9).unwrap().sample_ids,
            stratified_sample(&ds, 5, 10).unwrap().sample_ids
        );
    }

    #[test]
    fn explicit_rejects_unknown_and_repeated() {
        let ds = dataset(2);
        assert!(explicit_set(&ds, vec!["math-0-true".into(), "web-1-false".into()]).is_ok());
        assert!(matches!(
            explicit_set(&ds, vec!["nope".into()]),
            Err(ReviewError::UnknownSample { .. })
        ));
        assert!(explicit_set(&ds, vec!["math-0-true".into(), "math-0-true".into()]).is_err());
    }
}
