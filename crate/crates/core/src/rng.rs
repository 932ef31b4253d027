//! Seed derivation and noise generation.
//!
//! Every random draw in the pipeline is a pure function of an explicit seed,
//! so logged seeds regenerate the exact noise vectors used in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with integer coordinates into a new seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Standard normal vector of length `dim` drawn from `seed`.
pub fn gaussian(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}
