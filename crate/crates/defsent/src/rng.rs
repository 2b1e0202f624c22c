//! Deterministic seed derivation.
//!
//! One user-facing seed fans out into independent named streams (split,
//! shuffle, masking, init, folds, ...) so that changing how one stage
//! consumes randomness never perturbs another. Derivation is a fixed hash,
//! stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for a named random stream.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &b in label.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h)
}

/// Derives the seed for one element of a named random stream, e.g. the
/// shuffle of a particular epoch or the masking of a particular step.
pub fn sub_seed_indexed(seed: u64, label: &str, index: u64) -> u64 {
    mix(sub_seed(seed, label) ^ index.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

/// Seeded generator used everywhere randomness is consumed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
