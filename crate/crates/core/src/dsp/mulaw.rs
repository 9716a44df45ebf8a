//! 8-bit μ-law companding (μ = 255) with midpoint decoding.
//!
//! Code `c` represents the companded level `y = 2c/255 - 1`; decoding inverts the
//! companding curve at exactly that level, so `encode(decode(c)) == c`.

use super::DspError;

pub const MULAW_LEVELS: usize = 256;
const MU: f64 = 255.0;

/// Code produced by an input of exactly zero.
pub const MULAW_SILENCE: u8 = 128;

fn compand(x: f64) -> f64 {
    x.signum() * (MU * x.abs()).ln_1p() / (1.0 + MU).ln()
}

fn expand(y: f64) -> f64 {
    y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU
}

/// Encodes one sample, clamping to `[-1, 1]`.
pub fn mulaw_encode(x: f64) -> u8 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    let y = if x == 0.0 { 0.0 } else { compand(x) };
    ((y + 1.0) / 2.0 * MU).round().clamp(0.0, MU) as u8
}

pub fn mulaw_decode(code: u8) -> f64 {
    expand(2.0 * f64::from(code) / MU - 1.0)
}

pub fn mulaw_decode_checked(code: usize) -> Result<f64, DspError> {
    u8::try_from(code)
        .map(mulaw_decode)
        .map_err(|_| DspError::CodeOutOfRange(code))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulawCodes {
    pub codes: Vec<u8>,
    /// Samples with `|x| > 1` that were clamped.
    pub saturated: usize,
}

pub fn mulaw_encode_all(samples: &[f64]) -> MulawCodes {
    let saturated = samples.iter().filter(|x| x.abs() > 1.0).count();
    MulawCodes {
        codes: samples.iter().map(|&x| mulaw_encode(x)).collect(),
        saturated,
    }
}
