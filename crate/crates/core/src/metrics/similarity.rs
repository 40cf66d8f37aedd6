//! Ratcliff-Obershelp similarity over character sequences.
//!
//! The longest common contiguous block is located first (ties go to the earliest start in
//! `a`, then the earliest start in `b`), then the regions to its left and right are matched
//! recursively. No junk or popularity heuristics are applied, so the ratio depends only on
//! the two inputs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingBlock {
    pub a_start: usize,
    pub b_start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    /// Lowercase and collapse whitespace runs before comparing.
    pub normalize: bool,
}

/// Longest common block of `a[alo..ahi]` and `b[blo..bhi]`.
fn longest_match<T: Eq>(
    a: &[T],
    b: &[T],
    (alo, ahi): (usize, usize),
    (blo, bhi): (usize, usize),
) -> MatchingBlock {
    let width = bhi - blo;
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    let mut best = MatchingBlock {
        a_start: alo,
        b_start: blo,
        length: 0,
    };
    for (i, x) in a.iter().enumerate().take(ahi).skip(alo) {
        for (offset, y) in b[blo..bhi].iter().enumerate() {
            let (j, col) = (blo + offset, offset + 1);
            cur[col] = if x == y { prev[col - 1] + 1 } else { 0 };
            // Scanning ends in row-major order and keeping only strict improvements picks
            // the earliest start in `a`, then in `b`, among equally long blocks.
            if cur[col] > best.length {
                best = MatchingBlock {
                    a_start: i + 1 - cur[col],
                    b_start: j + 1 - cur[col],
                    length: cur[col],
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// All matching blocks, ordered and non-overlapping in both sequences.
pub fn matching_blocks<T: Eq>(a: &[T], b: &[T]) -> Vec<MatchingBlock> {
    let mut pending = vec![((0, a.len()), (0, b.len()))];
    let mut blocks = Vec::new();
    while let Some((ra, rb)) = pending.pop() {
        if ra.0 >= ra.1 || rb.0 >= rb.1 {
            continue;
        }
        let block = longest_match(a, b, ra, rb);
        if block.length == 0 {
            continue;
        }
        pending.push(((ra.0, block.a_start), (rb.0, block.b_start)));
        pending.push((
            (block.a_start + block.length, ra.1),
            (block.b_start + block.length, rb.1),
        ));
        blocks.push(block);
    }
    blocks.sort_by_key(|m| (m.a_start, m.b_start));
    blocks
}

/// Total matched length `M` and combined length `|a| + |b|`.
pub fn match_counts(a: &str, b: &str) -> (usize, usize) {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let matched = matching_blocks(&a, &b).iter().map(|m| m.length).sum();
    (matched, a.len() + b.len())
}

/// `2M / (|a| + |b|)`, with two empty inputs scoring 1.
pub fn sequence_similarity(a: &str, b: &str) -> f64 {
    let (matched, total) = match_counts(a, b);
    if total == 0 {
        1.0
    } else {
        2.0 * matched as f64 / total as f64
    }
}

pub fn similarity_with(a: &str, b: &str, options: SimilarityOptions) -> f64 {
    if options.normalize {
        sequence_similarity(&normalize(a), &normalize(b))
    } else {
        sequence_similarity(a, b)
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_checks() {
        assert_eq!(sequence_similarity("abcd", "abcd"), 1.0);
        assert_eq!(sequence_similarity("abcd", ""), 0.0);
        assert_eq!(sequence_similarity("", ""), 1.0);
        assert_eq!(sequence_similarity("abcd", "bcde"), 0.75);
    }

    #[test]
    fn tie_break_prefers_earliest_in_a_then_b() {
        let a: Vec<char> = "abxab".chars().collect();
        let b: Vec<char> = "ab".chars().collect();
        let best = longest_match(&a, &b, (0, a.len()), (0, b.len()));
        assert_eq!((best.a_start, best.b_start, best.length), (0, 0, 2));

        let a: Vec<char> = "ab".chars().collect();
        let b: Vec<char> = "xabab".chars().collect();
        let best = longest_match(&a, &b, (0, a.len()), (0, b.len()));
        assert_eq!((best.a_start, best.b_start), (0, 1));
    }

    #[test]
    fn case_sensitive_unless_normalized() {
        assert!(sequence_similarity("ABC", "abc") < 1.0);
        let opts = SimilarityOptions { normalize: true };
        assert_eq!(similarity_with("Redundant  Toggle", "redundant toggle", opts), 1.0);
    }

    #[test]
    fn counts_characters_not_bytes() {
        assert_eq!(match_counts("héllo", "héllo"), (5, 10));
    }

    proptest! {
        #[test]
        fn blocks_are_ordered_and_disjoint(a in "[abc]{0,16}", b in "[abc]{0,16}") {
            let av: Vec<char> = a.chars().collect();
            let bv: Vec<char> = b.chars().collect();
            let blocks = matching_blocks(&av, &bv);
            for w in blocks.windows(2) {
                prop_assert!(w[0].a_start + w[0].length <= w[1].a_start);
                prop_assert!(w[0].b_start + w[0].length <= w[1].b_start);
            }
            for m in &blocks {
                prop_assert!(m.length >= 1);
                prop_assert_eq!(&av[m.a_start..m.a_start + m.length], &bv[m.b_start..m.b_start + m.length]);
            }
            let s = sequence_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(sequence_similarity(&a, &a), 1.0);
            if !a.is_empty() {
                prop_assert_eq!(sequence_similarity(&a, ""), 0.0);
            }
        }
    }
}
