//! Counter-based seed derivation.
//!
//! Every stochastic component takes an explicit `u64` seed derived from the
//! master seed plus a tuple of indices (scenario, outer step, episode, ...).
//! This keeps any single episode reproducible in isolation and avoids hidden
//! global RNG state.

/// splitmix64 finalizer; a full-avalanche mix of one word.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with one index.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Derives a child seed from a path of indices.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |acc, &i| mix(acc, i))
}
