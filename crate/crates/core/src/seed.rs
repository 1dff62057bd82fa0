//! Keyed seed derivation.
//!
//! Every random stream in a run is derived from a base seed plus a small
//! tuple of integer keys, so runs are reproducible and independent streams
//! never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for environment construction, contexts and reward noise.
pub const STREAM_ENV: u64 = 0x656e_7669;
/// Stream tag for policy randomness.
pub const STREAM_ALGO: u64 = 0x616c_676f;
/// Stream tag for the replay schedule.
pub const STREAM_REPLAY: u64 = 0x7265_706c;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a base seed together with a sequence of keys.
pub fn derive(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Uniform draw in `[0, 1)` that is a pure function of its keys.
#[inline]
pub fn unit_hash(base: u64, keys: &[u64]) -> f64 {
    (derive(base, keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
