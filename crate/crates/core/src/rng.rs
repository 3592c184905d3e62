//! Seed derivation for independent generator streams.
//!
//! A child stream seed is `mix64(root + GOLDEN * (stream + 1))` (wrapping
//! arithmetic), where `mix64` is the SplitMix64 output finalizer. Each child
//! seed initializes a ChaCha8 generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub type StreamRng = ChaCha8Rng;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(root: u64, stream: u64) -> u64 {
    mix64(root.wrapping_add(GOLDEN.wrapping_mul(stream.wrapping_add(1))))
}

pub fn stream_rng(root: u64, stream: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(child_seed(root, stream))
}
