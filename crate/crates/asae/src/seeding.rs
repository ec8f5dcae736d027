//! Deterministic RNG substream derivation.
//!
//! Every stochastic component draws from a `ChaCha20Rng` seeded by mixing the
//! experiment seed with a stream tag. Substreams keep runs bit-reproducible
//! even when work is distributed across threads: the estimate for timestep
//! `(episode, t)` always sees the same stream no matter which worker runs it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// splitmix64 finalizer; good avalanche for combining small integers.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mix a seed with a sequence of stream tags into a single 64-bit value.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// RNG for a named substream of the experiment seed.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(mix(seed, tags))
}

/// FNV-1a over raw bytes; used for parameter snapshot hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hash a slice of f64 values by their bit patterns.
pub fn hash_f64s(values: impl Iterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

// Stream tag constants, one per stochastic component.
pub const STREAM_ACTOR_INIT: u64 = 1;
pub const STREAM_CRITIC_INIT: u64 = 2;
pub const STREAM_ROLLOUT: u64 = 3;
pub const STREAM_ADVANTAGE: u64 = 4;
pub const STREAM_CRITIC_SHUFFLE: u64 = 5;
pub const STREAM_EVAL: u64 = 6;
