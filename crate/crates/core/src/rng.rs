//! Seeded randomness.
//!
//! Every random draw comes from a ChaCha20 stream (`rand_chacha::ChaCha20Rng`)
//! seeded through `SeedableRng::seed_from_u64`. Independent streams, such as
//! replications of a sweep, use [`derive_seed`]: a SplitMix64 finalizer applied
//! to the base seed and the stream index. Outputs are reproducible bit for bit
//! within this implementation; other implementations can reproduce the
//! distributions but not the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

pub fn make_rng(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` derived from `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}
