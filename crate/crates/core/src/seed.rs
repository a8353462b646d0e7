//! Seed derivation. Every random draw in the crate flows from an explicit
//! `u64` seed; child seeds are derived by hashing (parent, index) so that
//! per-rollout, per-step and per-agent streams are independent and stable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    mix(mix(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Seed used by agent `agent`'s filter at `step` of the rollout seeded with `rollout_seed`.
pub fn filter_seed(rollout_seed: u64, step: usize, agent: usize) -> u64 {
    derive(derive(rollout_seed, step as u64), agent as u64)
}
