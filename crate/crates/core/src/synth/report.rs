use serde::{Deserialize, Serialize};

use crate::ratio::Rate;

/// Quality accounting for one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub raw_seed_count: u64,
    pub accepted_seed_count: u64,
    pub synthesis_attempts: u64,
    pub synthesis_successes: u64,
    pub refusals: u64,
    pub parse_failures: u64,
    /// Units dropped before generation (no applicable perturbation).
    pub skipped_units: u64,
    pub pass_rate: Rate,
    pub success_rate: Rate,
}

impl Default for PipelineReport {
    fn default() -> Self {
        Self::from_counts(0, 0, 0, 0, 0, 0, 0)
    }
}

impl PipelineReport {
    pub fn from_counts(
        raw_seed_count: u64,
        accepted_seed_count: u64,
        synthesis_attempts: u64,
        synthesis_successes: u64,
        refusals: u64,
        parse_failures: u64,
        skipped_units: u64,
    ) -> Self {
        PipelineReport {
            raw_seed_count,
            accepted_seed_count,
            synthesis_attempts,
            synthesis_successes,
            refusals,
            parse_failures,
            skipped_units,
            pass_rate: Rate::new(accepted_seed_count, raw_seed_count),
            success_rate: Rate::new(synthesis_successes, synthesis_attempts),
        }
    }

    /// Field-wise sum, rates recomputed.
    pub fn combine(&self, other: &PipelineReport) -> Self {
        Self::from_counts(
            self.raw_seed_count + other.raw_seed_count,
            self.accepted_seed_count + other.accepted_seed_count,
            self.synthesis_attempts + other.synthesis_attempts,
            self.synthesis_successes + other.synthesis_successes,
            self.refusals + other.refusals,
            self.parse_failures + other.parse_failures,
            self.skipped_units + other.skipped_units,
        )
    }

    /// `attempts == successes + refusals + parse_failures`.
    pub fn is_conserved(&self) -> bool {
        self.synthesis_attempts == self.synthesis_successes + self.refusals + self.parse_failures
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_counts() {
        let r = PipelineReport::from_counts(37625, 34436, 34436, 31742, 2000, 694, 0);
        assert_eq!(r.pass_rate.display, "91.5%");
        assert_eq!(r.success_rate.display, "92.2%");
        assert!(r.is_conserved());
    }

    #[test]
    fn zero_denominators() {
        let r = PipelineReport::default();
        assert_eq!(r.pass_rate.value, 0.0);
        assert_eq!(r.success_rate.value, 0.0);
    }
}
