//! Seeded random sampling helpers.
//!
//! Every random quantity in the crate is drawn from a `ChaCha8Rng` created
//! from an explicit `u64` seed, so identical seeds reproduce identical masks,
//! weights and noise bit-for-bit within a fixed build.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a base seed with a stream of labels (stage, epoch, item, ...) into a
/// new seed. SplitMix64 finalizer per label; order-sensitive.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut state = base;
    for &label in labels {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(label);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Standard normal via Box-Muller.
pub fn sample_normal(rng: &mut SeededRng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > 0.0 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Normal(0, std²) truncated to ±2 std by rejection.
pub fn sample_trunc_normal(rng: &mut SeededRng, std: f64) -> f64 {
    loop {
        let z = sample_normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Uniform on [lo, hi).
pub fn sample_uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

pub fn sample_bernoulli(rng: &mut SeededRng, p: f64) -> bool {
    let u: f64 = rng.random();
    u < p
}
