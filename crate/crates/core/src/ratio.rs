//! Exact rates. Values are kept as rationals and rendered at one decimal place, half-up.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

pub type Exact = Ratio<u64>;

/// `num / den`, or zero when `den == 0`.
pub fn exact(num: u64, den: u64) -> Exact {
    if den == 0 {
        Exact::from_integer(0)
    } else {
        Exact::new(num, den)
    }
}

pub fn to_f64(r: &Exact) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Renders `r` as a percentage with one decimal, rounding half-up on the exact value.
pub fn percent_one_decimal(r: &Exact) -> String {
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let tenths = (n * 2000 + d) / (2 * d);
    format!("{}.{}%", tenths / 10, tenths % 10)
}

/// A rate together with the counts it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
    pub display: String,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        let r = exact(numerator, denominator);
        Rate {
            numerator,
            denominator,
            value: to_f64(&r),
            display: percent_one_decimal(&r),
        }
    }

    pub fn exact(&self) -> Exact {
        exact(self.numerator, self.denominator)
    }
}
