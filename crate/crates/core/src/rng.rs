//! Seed plumbing.
//!
//! All randomness in the crate flows from one master seed through named
//! substreams, so adding a new consumer never perturbs existing ones and
//! per-item streams can be drawn in any order (or in parallel) without
//! changing results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the seed of substream `(tag, index)` under `master`.
pub fn substream_seed(master: u64, tag: &str, index: u64) -> u64 {
    mix(master ^ mix(fnv1a(tag.as_bytes())) ^ mix(index))
}

/// RNG for substream `(tag, index)` under `master`.
pub fn substream(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, tag, index))
}
