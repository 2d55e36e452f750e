//! Seeded RNG construction and deterministic seed derivation.
//!
//! Everything stochastic in the crate flows through a [`ChaCha12Rng`] built
//! from an explicit seed. Per-item seeds (corpus records, batch workers,
//! sampling sessions) are derived by mixing a global seed with an index so
//! that work can fan out across threads without losing reproducibility.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a domain tag and an index.
///
/// The tag keeps different consumers (records vs. noise draws vs. splits)
/// decorrelated even when they share the same parent seed and index.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(parent);
    for &b in tag.as_bytes() {
        h = mix(h ^ (b as u64));
    }
    mix(h ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn derived_rng(parent: u64, tag: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(parent, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derive_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "rec", 3), derive_seed(7, "rec", 3));
        assert_ne!(derive_seed(7, "rec", 3), derive_seed(7, "rec", 4));
        assert_ne!(derive_seed(7, "rec", 3), derive_seed(7, "split", 3));
        assert_ne!(derive_seed(7, "rec", 3), derive_seed(8, "rec", 3));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = derived_rng(42, "x", 0);
        let mut b = derived_rng(42, "x", 0);
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
