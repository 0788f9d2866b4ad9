//! Deterministic random streams derived from explicit seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator for a (seed, stream, index) triple. Every random draw in
/// the crate goes through here so results depend on explicit seeds only.
pub fn seeded(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, stream), index))
}

pub fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
