//! Deterministic random streams.
//!
//! Every random draw in a training run is keyed by `(seed, purpose, a, b)`
//! where `purpose` names the consumer (weight init, real batch, latent batch,
//! evaluation draws, ...) and `(a, b)` are indices such as (outer iteration,
//! batch slot). Each key derives an independent ChaCha8 stream, so:
//!
//! - runs are bit-reproducible regardless of evaluation cadence or method;
//! - two trainers sharing a config consume *identical* data draws at the same
//!   iteration/slot, making method comparisons differ only in the update rule.
//!
//! Uniform and normal variates are derived from raw `next_u64` output by
//! fixed arithmetic (no distribution-crate dependency), so streams are stable
//! across platforms and dependency upgrades.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::mathx;

/// Stream purposes. The values are part of the determinism contract: changing
/// them changes every derived stream.
pub mod purpose {
    pub const INIT_GEN: u64 = 1;
    pub const INIT_DISC: u64 = 2;
    pub const BATCH_REAL: u64 = 3;
    pub const BATCH_LATENT: u64 = 4;
    pub const EVAL_REAL: u64 = 5;
    pub const EVAL_LATENT: u64 = 6;
    pub const DATASET: u64 = 7;
}

/// One round of the splitmix64 output function; a solid 64-bit mixer.
#[inline]
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the ChaCha8 stream for `(seed, purpose, a, b)`.
pub fn substream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    // Absorb the key material through the mixer, then squeeze a 256-bit key.
    let mut state = seed;
    let mut acc = splitmix(&mut state);
    state ^= purpose.wrapping_mul(0xd605_0da3_53c5_06f1);
    acc ^= splitmix(&mut state);
    state ^= a.wrapping_mul(0x9139_3d58_cbf2_9b01);
    acc ^= splitmix(&mut state);
    state ^= b.wrapping_mul(0x52c9_7ee5_43f1_7f8d);
    acc ^= splitmix(&mut state);
    state ^= acc;

    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw in `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `(0, 1]` (safe as a `ln` argument).
#[inline]
fn uniform01_open_low(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One standard-normal pair via the Box–Muller transform.
#[inline]
pub fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = uniform01_open_low(rng);
    let u2 = uniform01(rng);
    let r = mathx::sqrt(-2.0 * mathx::ln(u1));
    let th = 2.0 * core::f64::consts::PI * u2;
    (r * mathx::cos(th), r * mathx::sin(th))
}

/// Fill a slice with standard-normal draws (pairs; an odd tail discards the
/// second element of the final pair so the consumed stream length is fixed).
pub fn fill_normal(rng: &mut impl RngCore, out: &mut [f64]) {
    let mut i = 0;
    while i + 1 < out.len() {
        let (a, b) = normal_pair(rng);
        out[i] = a;
        out[i + 1] = b;
        i += 2;
    }
    if i < out.len() {
        out[i] = normal_pair(rng).0;
    }
}
