//! Seeded randomness. Per-unit generators are derived from a root seed and a stable key, so
//! results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type UnitRng = ChaCha8Rng;

pub fn derive_seed(root: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn unit_rng(root: u64, key: &str) -> UnitRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, key))
}

pub fn seeded(seed: u64) -> UnitRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        let a: u64 = unit_rng(42, "seed-1").gen();
        let b: u64 = unit_rng(42, "seed-1").gen();
        let c: u64 = unit_rng(42, "seed-2").gen();
        let d: u64 = unit_rng(43, "seed-1").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
