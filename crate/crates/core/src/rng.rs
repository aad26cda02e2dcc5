//! Seed derivation.
//!
//! Every stage of an experiment (data generation, noise, init, per-epoch
//! shuffles, pseudo-label draws) gets its own named stream derived from one
//! root seed, so changing how one stage consumes randomness never perturbs
//! the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed of the stream `name` under `root`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    splitmix64(root ^ fnv1a64(name.as_bytes()))
}

/// Seed of the `idx`-th substream of `name` (for per-epoch streams).
pub fn indexed_seed(root: u64, name: &str, idx: u64) -> u64 {
    splitmix64(stream_seed(root, name) ^ splitmix64(idx))
}

pub fn stream_rng(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, name))
}

pub fn indexed_rng(root: u64, name: &str, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(indexed_seed(root, name, idx))
}
