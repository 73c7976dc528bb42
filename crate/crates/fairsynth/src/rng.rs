//! Seed derivation for reproducible experiment pipelines.
//!
//! Every source of randomness in a pipeline run is a ChaCha stream derived
//! from a single master seed plus a label path, e.g.
//! `derive_rng(seed, &[stream::AIM_MEASURE, round])`. Two runs with the same
//! master seed are bit-identical regardless of how work is scheduled, and
//! distinct label paths never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Top-level stream labels. Sub-streams append further labels (round
/// indices, attribute indices, repeat numbers) after the top-level label.
pub mod stream {
    pub const SPLIT: u64 = 0x01;
    pub const AIM_INIT: u64 = 0x02;
    pub const AIM_SELECT: u64 = 0x03;
    pub const AIM_MEASURE: u64 = 0x04;
    pub const AIM_SAMPLE: u64 = 0x05;
    pub const TOT_APPLY: u64 = 0x06;
    pub const SAMPLE: u64 = 0x07;
    pub const REPEAT: u64 = 0x08;
    pub const TIMING: u64 = 0x09;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 256-bit ChaCha seed from a master seed and a label path.
pub fn derive_seed(master: u64, path: &[u64]) -> [u8; 32] {
    let mut state = master ^ 0xA076_1D64_78BD_642F;
    let _ = splitmix64(&mut state);
    for &label in path {
        state ^= label.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        let _ = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// Derive a deterministic RNG for one labelled stream.
pub fn derive_rng(master: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed(master, path))
}

/// Derive a 64-bit sub-seed, for handing to operations that take a seed.
pub fn derive_u64(master: u64, path: &[u64]) -> u64 {
    u64::from_le_bytes(derive_seed(master, path)[..8].try_into().expect("8 bytes"))
}
