use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;

/// The intermediate band target steps are drawn from:
/// `[max(floor, ceil(lower_percent% of n)), max(floor, n - 1)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lower_percent: usize,
    pub floor: usize,
}

impl Default for Band {
    fn default() -> Self {
        Band {
            lower_percent: 30,
            floor: 2,
        }
    }
}

impl Band {
    pub fn bounds(&self, n: usize) -> Result<(usize, usize), SynthError> {
        if n < 3 {
            return Err(SynthError::TooShort { n });
        }
        // Integer ceiling: 0.3 * 10 in floating point rounds up to 4.
        let lower = (n * self.lower_percent).div_ceil(100).max(self.floor);
        let upper = (n - 1).max(self.floor);
        Ok((lower.min(upper), upper))
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<usize, SynthError> {
        let (lo, hi) = self.bounds(n)?;
        Ok(rng.gen_range(lo..=hi))
    }
}

pub fn sample_target_step(n: usize, rng: &mut impl Rng) -> Result<usize, SynthError> {
    Band::default().sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn band_edges() {
        let b = Band::default();
        assert_eq!(b.bounds(16).unwrap(), (5, 15));
        assert_eq!(b.bounds(10).unwrap(), (3, 9));
        assert_eq!(b.bounds(3).unwrap(), (2, 2));
        assert_eq!(b.bounds(2), Err(SynthError::TooShort { n: 2 }));
    }

    #[test]
    fn degenerate_band_always_two() {
        let mut rng = seeded(1);
        assert!((0..100).all(|_| sample_target_step(3, &mut rng).unwrap() == 2));
    }

    #[test]
    fn uniform_over_band() {
        let mut rng = seeded(7);
        let draws = 100_000;
        let mut counts = [0usize; 16];
        for _ in 0..draws {
            counts[sample_target_step(16, &mut rng).unwrap()] += 1;
        }
        assert!(counts[..5].iter().all(|&c| c == 0));
        let expected = draws as f64 / 11.0;
        let chi2: f64 = counts[5..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 10 degrees of freedom, p = 0.001.
        assert!(chi2 < 29.59, "chi2 = {chi2}");
    }

    #[test]
    fn same_seed_same_draws() {
        let a: Vec<_> = (0..20).map({
            let mut r = seeded(3);
            move |_| sample_target_step(30, &mut r).unwrap()
        }).collect();
        let b: Vec<_> = (0..20).map({
            let mut r = seeded(3);
            move |_| sample_target_step(30, &mut r).unwrap()
        }).collect();
        assert_eq!(a, b);
    }
}
