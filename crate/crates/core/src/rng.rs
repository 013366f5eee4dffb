//! Seed derivation. Every random quantity in a trial comes from a ChaCha8
//! stream keyed by the trial seed and a fixed purpose label, so results do
//! not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix64(mix64(seed) ^ label.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng_for(seed: u64, label: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, label))
}

// Purpose labels.
pub(crate) const BITS: u64 = 1;
pub(crate) const FADING: u64 = 2;
pub(crate) const NOISE: u64 = 3;
pub(crate) const CORRUPT: u64 = 4;
pub(crate) const PILOTS: u64 = 5;
