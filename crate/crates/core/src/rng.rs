//! Seed stream derivation. Every stochastic stage draws from its own stream
//! derived from the run seed and a stage label, so adding draws to one stage
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives a 64-bit sub-seed for `(seed, label, index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(label)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(seed: u64, label: &str, index: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}
