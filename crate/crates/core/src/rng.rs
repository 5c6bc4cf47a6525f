//! Seed derivation helpers.
//!
//! Every random draw in the pipeline comes from a `ChaCha8Rng` whose seed is
//! derived from a base seed plus a few stream identifiers, so independent
//! parts of a run never share a stream and results do not depend on the
//! order in which they are computed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Combine a base seed with stream identifiers.
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    streams
        .iter()
        .fold(mix64(base), |acc, &s| mix64(acc ^ mix64(s)))
}

pub fn rng_for(base: u64, streams: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, streams))
}
