//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a base seed
//! mixed with a list of integer tags, so independent consumers (weight init,
//! shuffling, assignment init, per-trial noise) never share a stream and the
//! value each one sees does not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const SHUFFLE: u64 = 0x2;
    pub const ASSIGNMENT: u64 = 0x3;
    pub const AUGMENT: u64 = 0x4;
    pub const FLATNESS: u64 = 0x5;
    pub const COMPRESSION_LABELS: u64 = 0x6;
    pub const COMPRESSION_HEAD: u64 = 0x7;
    pub const SUBSAMPLE: u64 = 0x8;
    pub const DATA: u64 = 0x9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`. `derive_seed(s, &[a, b])` is the documented
/// stream id for "stream `a`, sub-index `b`" under base seed `s`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}
