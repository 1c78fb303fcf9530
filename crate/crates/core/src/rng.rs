//! Counter-keyed random streams.
//!
//! Every random draw in the crate comes from a generator keyed by
//! `(seed, stream, index)`, so the value of draw `index` never depends on how
//! many draws were made before it or on which thread makes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating independent uses of the same seed.
pub mod stream {
    pub const SMOOTH_GUESS: u64 = 1;
    pub const SMOOTH_ESTIMATE: u64 = 2;
    pub const SMOOTH_PREDICT: u64 = 3;
    pub const TRAIN_SHUFFLE: u64 = 10;
    pub const TRAIN_NOISE: u64 = 11;
    pub const INIT_WEIGHTS: u64 = 12;
    pub const BASIS: u64 = 20;
    pub const SUBSET: u64 = 21;
    pub const DATA: u64 = 30;
    pub const ATTACK: u64 = 40;
    pub const MC_VOLUME: u64 = 50;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple into a single 64-bit seed.
pub fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ stream.rotate_left(17));
    splitmix64(b ^ index.rotate_left(41))
}

/// Generator for draw `index` of `stream` under `seed`.
pub fn keyed(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream, index))
}

/// Sub-seed for a nested component (e.g. one input of a batch).
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    mix(seed, stream, index)
}
