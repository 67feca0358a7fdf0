//! Deterministic random-stream derivation.
//!
//! Every random quantity in the toolkit is drawn from a ChaCha8 stream whose
//! key is a hash of a master seed and a path (replica index, node label, ...).
//! Results therefore do not depend on traversal order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag and a path of indices into a new 64-bit key.
pub fn derive(seed: u64, tag: u64, path: &[u32]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(tag));
    for &p in path {
        h = splitmix(h ^ u64::from(p).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    splitmix(h ^ path.len() as u64)
}

/// Sub-seed for replica `index` of the experiment identified by `tag`.
pub fn replica_seed(seed: u64, tag: u64, index: usize) -> u64 {
    let lo = index as u32;
    let hi = (index as u64 >> 32) as u32;
    derive(seed, tag, &[lo, hi])
}

pub fn stream(key: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(key)
}

/// Stable tag for a human-readable experiment name.
pub fn tag(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
