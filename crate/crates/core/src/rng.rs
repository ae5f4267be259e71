//! Seeded random streams.
//!
//! Every stochastic consumer draws from its own stream derived from the run
//! seed and a list of identifiers (world, condition, iteration, ...), so results
//! do not depend on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with stream identifiers into a single 64-bit stream key.
pub fn stream_key(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream_rng(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(stream_key(seed, parts))
}

/// Stable 64-bit FNV-1a hash of a string, for turning ids into stream parts.
pub fn str_id(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
