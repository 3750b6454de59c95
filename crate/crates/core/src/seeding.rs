//! Deterministic seed derivation. Every randomized operation owns a
//! `ChaCha8Rng` seeded through these helpers so that runs replay exactly
//! and independent stages never share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Fold a base seed with a sequence of labels into a fresh 64-bit seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut state = mix(base);
    for &label in labels {
        state = mix(state ^ label);
    }
    state
}

/// Seeded generator for the given stage labels.
pub fn rng_for(base: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}
