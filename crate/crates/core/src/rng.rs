//! Deterministic seed-stream derivation.
//!
//! All randomness in the crate flows from named master seeds through
//! [`derive_rng`], which mixes a master seed with a purpose tag and an index
//! into an independent ChaCha stream. Identical (seed, tag, index) triples
//! yield identical streams on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a hash of a byte string; stable across platforms and builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream from (master seed, purpose tag, index).
pub fn derive_rng(master: u64, tag: &str, index: u64) -> ChaCha12Rng {
    let mixed = splitmix(master ^ fnv1a(tag.as_bytes()).rotate_left(17) ^ splitmix(index));
    let mut seed = [0u8; 32];
    let mut state = mixed;
    for chunk in seed.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}
