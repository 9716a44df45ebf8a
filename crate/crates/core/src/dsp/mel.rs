//! 80-band Mel filterbank, Mel spectrograms and the tanh-log compression used as
//! the network's output domain.

use std::sync::OnceLock;

use super::stft::{default_stft_mag, N_BINS};
use super::{AudioBuffer, DspError, SAMPLE_RATE, WINDOW};
use crate::matrix::Matrix;

pub const N_MELS: usize = 80;
/// Linear magnitude at -100 dB.
pub const MEL_FLOOR: f64 = 1e-5;

const ARTANH_CLAMP: f64 = 1.0 - 1e-6;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn band_edges() -> Vec<f64> {
    let top = hz_to_mel(f64::from(SAMPLE_RATE) / 2.0);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Center frequency in Hz of each filter.
pub fn mel_center_frequencies() -> &'static [f64] {
    static CENTERS: OnceLock<Vec<f64>> = OnceLock::new();
    CENTERS.get_or_init(|| band_edges()[1..=N_MELS].to_vec())
}

/// `80 x 513` triangular filters evenly spaced on the Mel scale from 0 Hz to
/// Nyquist; each row sums to one.
pub fn mel_filterbank() -> &'static Matrix {
    static FB: OnceLock<Matrix> = OnceLock::new();
    FB.get_or_init(|| {
        let edges = band_edges();
        let bin_hz = f64::from(SAMPLE_RATE) / WINDOW as f64;
        let mut fb = Matrix::zeros(N_MELS, N_BINS);
        for k in 0..N_MELS {
            let (lo, c, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            for j in 0..N_BINS {
                let f = j as f64 * bin_hz;
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                fb.set(k, j, w);
            }
            let sum: f64 = fb.row(k).iter().sum();
            assert!(sum > 0.0, "mel filter {k} covers no DFT bin");
            fb.row_mut(k).iter_mut().for_each(|w| *w /= sum);
        }
        fb
    })
}

/// Linear-magnitude Mel spectrogram, `80 x T`, floored at [`MEL_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
}

impl MelSpectrogram {
    /// Wraps linear magnitudes, applying the floor.
    pub fn from_linear(values: Matrix) -> Self {
        assert_eq!(values.rows(), N_MELS, "mel spectrogram must have 80 rows");
        Self {
            values: values.map(|v| v.max(MEL_FLOOR)),
        }
    }

    /// Inverse of [`tanh_log_compress`].
    pub fn from_compressed(compressed: &Matrix) -> Self {
        Self::from_linear(tanh_log_expand(compressed))
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }
}

pub fn apply_filterbank(mag: &Matrix) -> Matrix {
    let fb = mel_filterbank();
    let t = mag.cols();
    let mut out = Matrix::zeros(N_MELS, t);
    for k in 0..N_MELS {
        let weights = fb.row(k);
        let row = out.row_mut(k);
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                for (o, &m) in row.iter_mut().zip(mag.row(j)) {
                    *o += w * m;
                }
            }
        }
    }
    out
}

pub fn mel_spectrogram(audio: &AudioBuffer) -> Result<MelSpectrogram, DspError> {
    let mag = default_stft_mag(audio)?;
    Ok(MelSpectrogram::from_linear(apply_filterbank(&mag)))
}

/// Elementwise `tanh(ln(S) / 4)`.
pub fn tanh_log_compress(s: &MelSpectrogram) -> Matrix {
    s.values.map(|v| (0.25 * v.ln()).tanh())
}

/// Elementwise `exp(4 artanh(p))` with `p` clamped inside `(-1, 1)`.
pub fn tanh_log_expand(p: &Matrix) -> Matrix {
    p.map(|v| (4.0 * v.clamp(-ARTANH_CLAMP, ARTANH_CLAMP).atanh()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::sine;

    #[test]
    fn filterbank_shape_and_normalization() {
        let fb = mel_filterbank();
        assert_eq!((fb.rows(), fb.cols()), (80, 513));
        for k in 0..80 {
            let row = fb.row(k);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&w| w >= 0.0));
            // Unimodal: non-decreasing up to the peak, non-increasing after.
            let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        let c = mel_center_frequencies();
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c[79] < 8000.0);
    }

    #[test]
    fn all_ones_spectrum_maps_to_all_ones() {
        let ones = Matrix::filled(513, 3, 1.0);
        let mel = apply_filterbank(&ones);
        assert!(mel.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn silence_is_clipped_to_floor() {
        let s = mel_spectrogram(&AudioBuffer::silence(2048)).unwrap();
        assert_eq!(s.values.rows(), 80);
        assert!(s.values.as_slice().iter().all(|&v| v == MEL_FLOOR));
    }

    #[test]
    fn sine_produces_strong_band() {
        let s = mel_spectrogram(&sine(1000.0, 1.0, 4096)).unwrap();
        let max = s.values.as_slice().iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(max > 1e-2, "max {max}");
    }

    #[test]
    fn compression_values() {
        let s = MelSpectrogram::from_linear(Matrix::from_vec(80, 1, vec![1.0; 80]));
        assert!(tanh_log_compress(&s).as_slice().iter().all(|&v| v == 0.0));
        let floor = MelSpectrogram::from_linear(Matrix::zeros(80, 1));
        let v = tanh_log_compress(&floor).get(0, 0);
        assert!((v - (-0.993_65)).abs() < 1e-4, "{v}");
        assert!((v - (0.25 * 1e-5f64.ln()).tanh()).abs() < 1e-15);
    }

    #[test]
    fn compression_is_strictly_increasing_and_bounded() {
        let values: Vec<f64> = (0..400).map(|i| MEL_FLOOR * 1.1f64.powi(i)).collect();
        let s = MelSpectrogram::from_linear(Matrix::from_vec(80, 5, values));
        let c = tanh_log_compress(&s);
        assert!(c.as_slice().windows(2).all(|w| w[0] < w[1]));
        assert!(c.as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn expand_inverts_compress() {
        let s = MelSpectrogram::from_linear(Matrix::from_fn(80, 4, |r, c| 1e-4 * (1 + r + c) as f64));
        let back = MelSpectrogram::from_compressed(&tanh_log_compress(&s));
        for (a, b) in s.values.as_slice().iter().zip(back.values.as_slice()) {
            assert!(((a - b) / a).abs() < 1e-9);
        }
    }
}
