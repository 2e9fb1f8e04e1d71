//! Seed derivation.
//!
//! Every random stream in the crate is derived from a master seed and a
//! tuple of stream coordinates, so results never depend on evaluation order
//! or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stream `stream` of `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN_GAMMA) ^ mix64(stream.wrapping_add(GOLDEN_GAMMA)))
}

/// Folds several stream coordinates into one child seed.
pub fn derive_many(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(seed, |acc, &c| derive(acc, c))
}

/// 64-bit FNV-1a. Stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
