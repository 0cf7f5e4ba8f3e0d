//! Deterministic numeric kernel: dense matrices, MLPs with reverse-mode
//! gradients, Adam, and counter-based random streams.

mod adam;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use mlp::{sigmoid, Activation, Mlp, MlpGrads, MlpRecord, Tape, ROW_CHUNK};
pub use rng::{gaussian_draw, RngSnapshot, RngStream};

/// `ln(1 + e^x)`, stable for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable fingerprint of a parameter slice (bit-level).
pub fn fingerprint(values: &[f64]) -> u64 {
    // FNV-1a over the raw bits.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
