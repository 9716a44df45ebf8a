//! Direct constant-Q transform: 84 bins, 12 per octave from C1, hop 512.
//!
//! Each bin correlates the signal with its own Hann-windowed complex exponential
//! of length `ceil(Q * sr / f_k)`, `Q = 1 / (2^(1/12) - 1)`, centered on the frame.

use std::sync::OnceLock;

use rustfft::num_complex::Complex64;

use super::mel::MEL_FLOOR;
use super::{AudioBuffer, DspError, SAMPLE_RATE};
use crate::matrix::Matrix;

pub const CQT_BINS: usize = 84;
pub const CQT_BINS_PER_OCTAVE: usize = 12;
pub const CQT_HOP: usize = 512;
/// C1, MIDI note 24.
pub const CQT_F_MIN: f64 = 32.703_195_662_574_83;

pub fn cqt_bin_frequency(k: usize) -> f64 {
    CQT_F_MIN * 2f64.powf(k as f64 / CQT_BINS_PER_OCTAVE as f64)
}

fn q_factor() -> f64 {
    1.0 / (2f64.powf(1.0 / CQT_BINS_PER_OCTAVE as f64) - 1.0)
}

/// Natural-log magnitudes, `84 x T'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtSpectrogram {
    pub values: Matrix,
}

struct Kernel {
    taps: Vec<Complex64>,
}

fn kernels() -> &'static [Kernel] {
    static K: OnceLock<Vec<Kernel>> = OnceLock::new();
    K.get_or_init(|| {
        let sr = f64::from(SAMPLE_RATE);
        let q = q_factor();
        (0..CQT_BINS)
            .map(|k| {
                let f = cqt_bin_frequency(k);
                let n = (q * sr / f).ceil() as usize;
                let window = super::stft::hann(n);
                let norm: f64 = window.iter().sum();
                let center = n as f64 / 2.0;
                let taps = window
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let phase = -2.0 * std::f64::consts::PI * f * (i as f64 - center) / sr;
                        Complex64::from_polar(w / norm, phase)
                    })
                    .collect();
                Kernel { taps }
            })
            .collect()
    })
}

/// Length of the lowest bin's kernel; shorter signals are rejected.
pub fn longest_kernel() -> usize {
    kernels()[0].taps.len()
}

pub fn cqt_log_mag(audio: &AudioBuffer) -> Result<CqtSpectrogram, DspError> {
    let x = &audio.samples;
    let min = longest_kernel();
    if x.len() < min {
        return Err(DspError::TooShort { len: x.len(), min });
    }
    let frames = x.len().div_ceil(CQT_HOP);
    let mut values = Matrix::zeros(CQT_BINS, frames);
    for (k, kernel) in kernels().iter().enumerate() {
        let n = kernel.taps.len();
        for m in 0..frames {
            let start = (m * CQT_HOP) as isize - (n / 2) as isize;
            let lo = (-start).max(0) as usize;
            let hi = n.min((x.len() as isize - start).max(0) as usize);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in lo..hi {
                acc += kernel.taps[i] * x[(start + i as isize) as usize];
            }
            values.set(k, m, acc.norm().max(MEL_FLOOR).ln());
        }
    }
    Ok(CqtSpectrogram { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::sine;

    fn argmax_bin(c: &CqtSpectrogram) -> usize {
        let energy: Vec<f64> = (0..CQT_BINS).map(|k| c.values.row(k).iter().sum()).collect();
        (0..CQT_BINS).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap()
    }

    #[test]
    fn bin_frequencies_are_geometric() {
        assert!((cqt_bin_frequency(0) - 32.70).abs() < 0.01);
        assert!((cqt_bin_frequency(12) / cqt_bin_frequency(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn c2_sine_lands_in_bin_12() {
        let expected = (12.0 * (65.41f64 / 32.70).log2()).round() as usize;
        assert_eq!(expected, 12);
        let c = cqt_log_mag(&sine(65.41, 0.8, 16_000)).unwrap();
        assert_eq!(c.values.rows(), 84);
        assert_eq!(argmax_bin(&c), expected);
    }

    #[test]
    fn octave_shift_moves_argmax_by_twelve() {
        let base = argmax_bin(&cqt_log_mag(&sine(440.0, 0.5, 16_000)).unwrap());
        assert_eq!(base, 45);
        let up = argmax_bin(&cqt_log_mag(&sine(880.0, 0.5, 16_000)).unwrap());
        let down = argmax_bin(&cqt_log_mag(&sine(220.0, 0.5, 16_000)).unwrap());
        assert_eq!(up, base + 12);
        assert_eq!(down, base - 12);
    }

    #[test]
    fn silence_is_log_floor() {
        let c = cqt_log_mag(&AudioBuffer::silence(9000)).unwrap();
        assert!(c.values.as_slice().iter().all(|&v| v == MEL_FLOOR.ln()));
    }

    #[test]
    fn short_audio_rejected() {
        assert!(cqt_log_mag(&AudioBuffer::silence(4000)).is_err());
    }
}
