//! Deterministic random stream derivation.
//!
//! Every stochastic quantity in an experiment (noise, plaintexts, interferer
//! samples) is drawn from its own stream, keyed by the experiment seed plus a
//! descriptive path of integers. Streams are independent of scheduling, so
//! splitting a sweep across workers never changes the output.

use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Domain tags for the first path element of [`stream`].
pub mod tag {
    pub const NOISE: u64 = 1;
    pub const PLAINTEXT: u64 = 2;
    pub const TTEST_CLASSES: u64 = 3;
    pub const DETECTION: u64 = 4;
    pub const CALIBRATION: u64 = 5;
    pub const DEVICE_TEXTURE: u64 = 6;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator from `seed` and a path of integers.
///
/// The path is mixed into the state one element at a time, so distinct paths
/// of any length yield unrelated streams.
pub fn stream(seed: u64, path: &[u64]) -> Xoshiro256PlusPlus {
    let mut state = seed ^ 0x5cea_11ab_0d10_5eed;
    let mut mixed = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0x2545_f491_4f6c_dd1d);
        mixed ^= splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    let mut s = mixed;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(key)
}

/// Stable 64-bit label for a grid frequency, usable as a stream path element.
pub fn freq_label(f_hz: f64) -> u64 {
    f_hz.to_bits()
}
