//! Short-time Fourier transform with a periodic Hann window and centered,
//! reflection-padded frames.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AudioBuffer, DspError, HOP, WINDOW};

/// One-sided bins for the 1024-sample window.
pub const N_BINS: usize = WINDOW / 2 + 1;

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn n_frames(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Complex one-sided STFT frames, unnormalized (`frames[t][k]`).
#[derive(Debug, Clone)]
pub struct StftFrames {
    pub frames: Vec<Vec<Complex64>>,
    pub window: usize,
    pub hop: usize,
}

fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = i;
    // Single reflection suffices because padding never exceeds len - 1.
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

pub fn stft_complex(samples: &[f64], window: usize, hop: usize) -> Result<StftFrames, DspError> {
    if samples.len() < window {
        return Err(DspError::TooShort {
            len: samples.len(),
            min: window,
        });
    }
    let w = hann(window);
    let fft = plan(window, false);
    let half = (window / 2) as isize;
    let t = n_frames(samples.len(), hop);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut frames = Vec::with_capacity(t);
    for m in 0..t {
        let start = (m * hop) as isize - half;
        for (n, b) in buf.iter_mut().enumerate() {
            let idx = reflect(start + n as isize, samples.len());
            *b = Complex64::new(samples[idx] * w[n], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..window / 2 + 1].to_vec());
    }
    Ok(StftFrames { frames, window, hop })
}

/// Magnitude spectrogram `(window/2 + 1) x T`, scaled by `1 / sum(window)` so a
/// full-scale sinusoid peaks near 0.5.
pub fn stft_mag(audio: &AudioBuffer, window: usize, hop: usize) -> Result<crate::matrix::Matrix, DspError> {
    let frames = stft_complex(&audio.samples, window, hop)?;
    let scale = 1.0 / (window as f64 / 2.0);
    let bins = window / 2 + 1;
    let t = frames.frames.len();
    let mut out = crate::matrix::Matrix::zeros(bins, t);
    for (m, frame) in frames.frames.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            out.set(k, m, c.norm() * scale);
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`stft_complex`], trimmed to `len` samples.
pub fn istft(frames: &StftFrames, len: usize) -> Vec<f64> {
    let window = frames.window;
    let hop = frames.hop;
    let w = hann(window);
    let ifft = plan(window, true);
    let half = window / 2;
    let padded_len = (frames.frames.len().saturating_sub(1)) * hop + window;
    let mut out = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    for (m, frame) in frames.frames.iter().enumerate() {
        buf[..=half].copy_from_slice(frame);
        for k in 1..half {
            buf[window - k] = frame[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = m * hop;
        for n in 0..window {
            out[start + n] += buf[n].re / window as f64 * w[n];
            norm[start + n] += w[n] * w[n];
        }
    }
    (0..len)
        .map(|i| {
            let j = i + half;
            if j < padded_len && norm[j] > 1e-8 {
                out[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect()
}

/// Convenience: STFT magnitude at the model's window and hop.
pub(crate) fn default_stft_mag(audio: &AudioBuffer) -> Result<crate::matrix::Matrix, DspError> {
    stft_mag(audio, WINDOW, HOP)
}
