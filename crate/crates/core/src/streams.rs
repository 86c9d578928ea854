//! Counter-based random streams.
//!
//! Every draw in the system comes from a ChaCha8 generator whose seed is a
//! SplitMix64 hash of `(root seed, domain tag, counters...)`. Two different
//! key tuples give independent streams, and a stream never depends on how
//! many values other streams consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Demand draws, keyed by `(episode seed, step, directed edge)`.
pub const DEMAND: u64 = 0x6465_6d61_6e64;
/// Parameter initialization, keyed by `(root seed)`.
pub const INIT: u64 = 0x696e_6974;
/// Per-episode seed derivation, keyed by `(root seed, episode)`.
pub const EPISODE: u64 = 0x6570_6973_6f64_65;
/// Action sampling, keyed by `(episode seed, step)`.
pub const ACTION: u64 = 0x6163_7469_6f6e;
/// Evaluation episode seeds, keyed by `(evaluation seed, episode)`.
pub const EVAL: u64 = 0x6576_616c;
/// Edge-sampler noise, keyed by `(episode seed, step)`.
pub const EDGE_NOISE: u64 = 0x6e6f_6973_65;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn key(root: u64, domain: u64, counters: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ splitmix64(domain));
    for &c in counters {
        h = splitmix64(h ^ c);
    }
    h
}

pub fn stream(root: u64, domain: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(root, domain, counters))
}

/// Seed of episode `episode` under `root`.
pub fn episode_seed(root: u64, episode: u64) -> u64 {
    key(root, EPISODE, &[episode])
}
