use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::rng::unit_rng;
use crate::trajectory::{
    AnomalyCategory, AnomalyLabel, AnomalyType, Dataset, DatasetError, LabeledTrajectory,
    Trajectory,
};

/// Manifest convention recording where Type II anomalies are located.
pub const CONVENTION_TYPE_II_LOCATION: (&str, &str) = ("type_ii_location", "first_inserted_step");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssembleError {
    #[error("pair {index}: anomaly {anomaly_id} has source {found:?} but is paired with {expected}")]
    PairingError {
        index: usize,
        anomaly_id: String,
        expected: String,
        found: Option<String>,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Goldens labeled Normal, each followed by its anomaly.
///
/// A golden shared by several anomalies appears once per pair, so the same seed may not
/// be paired twice.
pub fn assemble_balanced(
    pairs: Vec<(Trajectory, LabeledTrajectory)>,
) -> Result<Dataset, AssembleError> {
    let mut items = Vec::with_capacity(pairs.len() * 2);
    for (index, (golden, anomaly)) in pairs.into_iter().enumerate() {
        if anomaly.label.source_id.as_deref() != Some(golden.id.as_str()) {
            return Err(AssembleError::PairingError {
                index,
                anomaly_id: anomaly.trajectory.id.clone(),
                expected: golden.id,
                found: anomaly.label.source_id,
            });
        }
        items.push(LabeledTrajectory {
            trajectory: golden,
            label: AnomalyLabel::normal(),
        });
        items.push(anomaly);
    }
    let conventions = BTreeMap::from([(
        CONVENTION_TYPE_II_LOCATION.0.to_string(),
        CONVENTION_TYPE_II_LOCATION.1.to_string(),
    )]);
    Ok(Dataset::with_conventions(items, conventions)?)
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("test fraction must lie strictly between 0 and 1, got {0}")]
pub struct SplitError(pub f64);

/// Splits per task, keeping every item that shares a pair key in the same partition.
/// Each task sends `round(fraction * groups)` of its pair groups to test.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), SplitError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SplitError(test_fraction));
    }
    let mut groups: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for item in dataset.items() {
        groups
            .entry(item.trajectory.task.as_str())
            .or_default()
            .insert(item.pair_key());
    }
    let mut test_keys: BTreeSet<(&str, &str)> = BTreeSet::new();
    for (task, keys) in groups {
        let mut keys: Vec<&str> = keys.into_iter().collect();
        keys.shuffle(&mut unit_rng(seed, task));
        let k = (test_fraction * keys.len() as f64).round() as usize;
        test_keys.extend(keys[..k].iter().map(|key| (task, *key)));
    }
    let (test, train): (Vec<_>, Vec<_>) = dataset
        .items()
        .iter()
        .cloned()
        .partition(|i| test_keys.contains(&(i.trajectory.task.as_str(), i.pair_key())));
    let conventions = dataset.conventions().clone();
    let build = |items| {
        Dataset::with_conventions(items, conventions.clone()).expect("subset of a valid dataset")
    };
    Ok((build(train), build(test)))
}

/// Anomaly quotas spread evenly over the three categories and then over subtypes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixPlan {
    pub total: usize,
    pub per_category: BTreeMap<AnomalyCategory, usize>,
    pub per_type: BTreeMap<AnomalyType, usize>,
}

impl MixPlan {
    /// One subtype per slot, grouped by subtype in taxonomy order.
    pub fn assignments(&self) -> Vec<AnomalyType> {
        AnomalyType::ALL
            .iter()
            .flat_map(|t| std::iter::repeat_n(*t, self.per_type.get(t).copied().unwrap_or(0)))
            .collect()
    }
}

fn spread(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |i| total / parts + usize::from(i < total % parts))
}

pub fn anomaly_mix_plan(total: usize) -> Result<MixPlan, SynthError> {
    if total < 3 {
        return Err(SynthError::MixTooSmall(total));
    }
    let mut per_category = BTreeMap::new();
    let mut per_type = BTreeMap::new();
    for (cat, quota) in AnomalyCategory::ALL.into_iter().zip(spread(total, 3)) {
        per_category.insert(cat, quota);
        let subs = cat.subtypes();
        for (t, q) in subs.iter().zip(spread(quota, subs.len())) {
            per_type.insert(*t, q);
        }
    }
    Ok(MixPlan {
        total,
        per_category,
        per_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::META_SOURCE_ID;
    use crate::trajectory::{Action, Domain, Step, Verdict};
    use proptest::prelude::*;

    fn traj(id: &str, task: &str) -> Trajectory {
        Trajectory {
            id: id.into(),
            instruction: "x".into(),
            available_tools: vec![],
            steps: (1..=3)
                .map(|i| Step::new(i, "t", Action::from_raw("a"), "o"))
                .collect(),
            domain: Domain::Coding,
            task: task.into(),
            metadata: Default::default(),
        }
    }

    fn pair(i: usize, task: &str) -> (Trajectory, LabeledTrajectory) {
        let gold = traj(&format!("{task}-{i}"), task);
        let mut anom = traj(&format!("{task}-{i}~I.a@2"), task);
        anom.metadata.insert(META_SOURCE_ID.into(), gold.id.clone());
        let label = AnomalyLabel::anomaly(AnomalyType::ReasoningError, 2, "c", Some(gold.id.clone()));
        (gold, LabeledTrajectory { trajectory: anom, label })
    }

    #[test]
    fn balanced_and_mismatch() {
        let ds = assemble_balanced((0..5).map(|i| pair(i, "a")).collect()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.manifest().count(Verdict::Normal), ds.manifest().count(Verdict::Anomaly));
        assert_eq!(ds.conventions()["type_ii_location"], "first_inserted_step");

        assert!(assemble_balanced(vec![]).unwrap().is_empty());

        let mut pairs: Vec<_> = (0..5).map(|i| pair(i, "a")).collect();
        pairs[3].1.label.source_id = Some("other".into());
        match assemble_balanced(pairs) {
            Err(AssembleError::PairingError { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_hundred_pairs() {
        let ds = assemble_balanced((0..100).map(|i| pair(i, "a")).collect()).unwrap();
        let (train, test) = stratified_split(&ds, 0.1, 7).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 180);
        let again = stratified_split(&ds, 0.1, 7).unwrap();
        assert_eq!(again.1, test);
        assert!(stratified_split(&ds, 1.5, 7).is_err());
        assert!(stratified_split(&ds, 0.0, 7).is_err());
    }

    #[test]
    fn mix_examples() {
        let p = anomaly_mix_plan(9).unwrap();
        assert!(p.per_category.values().all(|&q| q == 3));
        let p = anomaly_mix_plan(10).unwrap();
        let qs: Vec<usize> = p.per_category.values().copied().collect();
        assert_eq!(qs, vec![4, 3, 3]);
        assert_eq!(p.assignments().len(), 10);
        assert!(anomaly_mix_plan(2).is_err());
    }

    proptest! {
        #[test]
        fn mix_is_even(total in 3usize..100_000) {
            let p = anomaly_mix_plan(total).unwrap();
            let cats: Vec<usize> = p.per_category.values().copied().collect();
            prop_assert_eq!(cats.iter().sum::<usize>(), total);
            prop_assert!(cats.iter().max().unwrap() - cats.iter().min().unwrap() <= 1);
            prop_assert_eq!(p.per_type.values().sum::<usize>(), total);
            for cat in AnomalyCategory::ALL {
                let q: Vec<usize> = cat.subtypes().iter().map(|t| p.per_type[t]).collect();
                prop_assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn split_never_leaks(sizes in proptest::collection::vec(1usize..30, 1..6), seed in any::<u64>()) {
            let pairs: Vec<_> = sizes
                .iter()
                .enumerate()
                .flat_map(|(t, &n)| (0..n).map(move |i| pair(i, &format!("task{t}"))))
                .collect();
            let ds = assemble_balanced(pairs).unwrap();
            let (train, test) = stratified_split(&ds, 0.1, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), ds.len());
            let train_keys: BTreeSet<&str> = train.items().iter().map(|i| i.pair_key()).collect();
            prop_assert!(test.items().iter().all(|i| !train_keys.contains(i.pair_key())));
        }
    }
}
