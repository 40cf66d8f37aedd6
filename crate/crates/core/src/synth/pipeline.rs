use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    annotate, anomaly_mix_plan, complete_trajectory, default_error_content, inject_perturbation,
    Band, GenerationFailure, Generator, MixPlan, Perturber, PipelineReport, RefusalDetector,
    SynthError,
};
use crate::rng::unit_rng;
use crate::trajectory::{AnomalyType, LabeledTrajectory, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub root_seed: u64,
    #[serde(default)]
    pub band: Band,
    #[serde(default)]
    pub refusal: RefusalDetector,
    /// Fixed error content per subtype instead of the templated description.
    #[serde(default)]
    pub error_content_overrides: BTreeMap<AnomalyType, String>,
}

impl SynthesisConfig {
    pub fn new(root_seed: u64) -> Self {
        SynthesisConfig {
            root_seed,
            band: Band::default(),
            refusal: RefusalDetector::default(),
            error_content_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitFailureKind {
    /// Dropped before generation.
    Skipped { reason: String },
    Generation(GenerationFailure),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub seed_id: String,
    pub anomaly_type: AnomalyType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_step: Option<usize>,
    #[serde(flatten)]
    pub kind: UnitFailureKind,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    /// Each anomaly with the golden it was derived from, in seed order.
    pub pairs: Vec<(Trajectory, LabeledTrajectory)>,
    pub failures: Vec<UnitFailure>,
    pub plan: MixPlan,
    pub report: PipelineReport,
}

/// One anomaly attempt per seed. Subtypes are dealt out by an even mix plan over the
/// seeds long enough to perturb; shorter seeds are skipped.
pub fn synthesize(
    seeds: &[Trajectory],
    perturber: &dyn Perturber,
    generator: &dyn Generator,
    config: &SynthesisConfig,
) -> Result<SynthesisOutput, SynthError> {
    let (usable, short): (Vec<&Trajectory>, Vec<&Trajectory>) =
        seeds.iter().partition(|s| config.band.bounds(s.len()).is_ok());
    let plan = anomaly_mix_plan(usable.len())?;
    let mut assignment = plan.assignments();
    assignment.shuffle(&mut unit_rng(config.root_seed, "mix-assignment"));

    let results: Vec<Result<(Trajectory, LabeledTrajectory), UnitFailure>> = usable
        .par_iter()
        .zip(assignment.par_iter())
        .map(|(seed, &anomaly_type)| run_unit(seed, anomaly_type, perturber, generator, config))
        .collect();

    let mut failures: Vec<UnitFailure> = short
        .iter()
        .map(|s| UnitFailure {
            seed_id: s.id.clone(),
            anomaly_type: AnomalyType::ReasoningError,
            target_step: None,
            kind: UnitFailureKind::Skipped {
                reason: SynthError::TooShort { n: s.len() }.to_string(),
            },
        })
        .collect();
    let mut pairs = Vec::new();
    let (mut attempts, mut refusals, mut parse_failures, mut skipped) = (0u64, 0u64, 0u64, 0u64);
    skipped += short.len() as u64;
    for r in results {
        match r {
            Ok(pair) => {
                attempts += 1;
                pairs.push(pair);
            }
            Err(f) => {
                match &f.kind {
                    UnitFailureKind::Skipped { .. } => skipped += 1,
                    UnitFailureKind::Generation(GenerationFailure::Refusal { .. }) => {
                        attempts += 1;
                        refusals += 1;
                    }
                    UnitFailureKind::Generation(GenerationFailure::ParseFailure { .. }) => {
                        attempts += 1;
                        parse_failures += 1;
                    }
                }
                failures.push(f);
            }
        }
    }
    let report = PipelineReport::from_counts(
        seeds.len() as u64,
        seeds.len() as u64,
        attempts,
        pairs.len() as u64,
        refusals,
        parse_failures,
        skipped,
    );
    Ok(SynthesisOutput {
        pairs,
        failures,
        plan,
        report,
    })
}

fn run_unit(
    seed: &Trajectory,
    anomaly_type: AnomalyType,
    perturber: &dyn Perturber,
    generator: &dyn Generator,
    config: &SynthesisConfig,
) -> Result<(Trajectory, LabeledTrajectory), UnitFailure> {
    let mut rng = unit_rng(config.root_seed, &seed.id);
    let fail = |target_step, kind| UnitFailure {
        seed_id: seed.id.clone(),
        anomaly_type,
        target_step,
        kind,
    };
    let skip = |t, e: SynthError| fail(t, UnitFailureKind::Skipped { reason: e.to_string() });
    let t = config.band.sample(seed.len(), &mut rng).map_err(|e| skip(None, e))?;
    let spec = perturber
        .spec(seed, anomaly_type, t, &mut rng)
        .map_err(|e| skip(Some(t), e))?;
    let prefix = inject_perturbation(seed, &spec).map_err(|e| skip(Some(t), e))?;
    let completed = complete_trajectory(&prefix, generator, &config.refusal, &mut rng)
        .map_err(|e| fail(Some(t), UnitFailureKind::Generation(e)))?;
    let content = config
        .error_content_overrides
        .get(&anomaly_type)
        .cloned()
        .unwrap_or_else(|| default_error_content(&spec));
    Ok((seed.clone(), annotate(completed, &spec, content)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::corpus::synthetic_seeds;
    use crate::synth::{assemble_balanced, ScriptedGenerator, TemplatePerturber};
    use crate::trajectory::Verdict;

    #[test]
    fn deterministic_and_conserved() {
        let seeds = synthetic_seeds(60, 3);
        let mut gen = ScriptedGenerator::golden_suffix();
        gen.refuse.insert(seeds[0].id.clone());
        gen.garble.insert(seeds[1].id.clone());
        let cfg = SynthesisConfig::new(42);
        let a = synthesize(&seeds, &TemplatePerturber, &gen, &cfg).unwrap();
        let b = synthesize(&seeds, &TemplatePerturber, &gen, &cfg).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert!(a.report.is_conserved());
        assert_eq!(a.report.refusals, 1);
        assert_eq!(a.report.parse_failures, 1);
        assert_eq!(a.report.synthesis_successes, 58);

        for (gold, anomaly) in &a.pairs {
            assert_eq!(anomaly.label.verdict, Verdict::Anomaly);
            let t: usize = anomaly.trajectory.metadata["target_step"].parse().unwrap();
            assert_eq!(anomaly.trajectory.steps[..t - 1], gold.steps[..t - 1]);
            let step = anomaly.label.first_error_step.unwrap();
            let expected = if anomaly.label.anomaly_type == Some(AnomalyType::Inefficiency) {
                t + 1
            } else {
                t
            };
            assert_eq!(step, expected);
        }
        let ds = assemble_balanced(a.pairs).unwrap();
        assert_eq!(ds.manifest().count(Verdict::Normal), 58);
    }

    #[test]
    fn too_few_seeds() {
        let seeds = synthetic_seeds(2, 3);
        let err = synthesize(&seeds, &TemplatePerturber, &ScriptedGenerator::golden_suffix(), &SynthesisConfig::new(1));
        assert!(matches!(err, Err(SynthError::MixTooSmall(2))));
    }
}
