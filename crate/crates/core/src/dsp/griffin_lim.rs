//! Fast audible preview of a Mel spectrogram: filterbank pseudo-inverse followed
//! by Griffin-Lim phase reconstruction.

use rand::{Rng, SeedableRng};
use rustfft::num_complex::Complex64;

use super::mel::{mel_filterbank, MelSpectrogram};
use super::stft::{istft, stft_complex, StftFrames, N_BINS};
use super::{AudioBuffer, HOP, WINDOW};
use crate::matrix::Matrix;

const PREVIEW_PEAK: f64 = 0.95;
/// Raw peaks below this are treated as silence and not amplified.
const SILENCE_PEAK: f64 = 1e-3;

/// Maps Mel magnitudes back onto STFT bins with the normalized transpose of the
/// filterbank (each bin takes the weighted mean of the bands covering it).
fn mel_to_linear(mel: &Matrix) -> Matrix {
    let fb = mel_filterbank();
    let t = mel.cols();
    let mut out = Matrix::zeros(N_BINS, t);
    for j in 0..N_BINS {
        let col_weight: f64 = (0..fb.rows()).map(|k| fb.get(k, j)).sum();
        if col_weight == 0.0 {
            continue;
        }
        for k in 0..fb.rows() {
            let w = fb.get(k, j) / col_weight;
            if w != 0.0 {
                for (o, &m) in out.row_mut(j).iter_mut().zip(mel.row(k)) {
                    *o += w * m;
                }
            }
        }
    }
    out
}

/// Griffin-Lim output before peak normalization; `T * 128` samples.
pub fn griffin_lim_raw(s: &MelSpectrogram, iterations: usize) -> AudioBuffer {
    let t = s.frames();
    let len = t * HOP;
    if t == 0 {
        return AudioBuffer::silence(0);
    }
    // Magnitudes were scaled by 1/sum(window) in the forward transform.
    let scale = WINDOW as f64 / 2.0;
    let mag = mel_to_linear(&s.values).map(|v| v * scale);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6c_696d);
    let mut frames = StftFrames {
        frames: (0..t)
            .map(|m| {
                (0..N_BINS)
                    .map(|k| Complex64::from_polar(mag.get(k, m), rng.gen_range(0.0..std::f64::consts::TAU)))
                    .collect()
            })
            .collect(),
        window: WINDOW,
        hop: HOP,
    };
    // The STFT needs at least one window of signal.
    let work_len = len.max(WINDOW);
    let mut audio = istft(&frames, work_len);
    for _ in 0..iterations {
        let est = stft_complex(&audio, WINDOW, HOP).expect("work_len >= WINDOW");
        for (m, frame) in frames.frames.iter_mut().enumerate() {
            for (k, c) in frame.iter_mut().enumerate() {
                let e = est.frames[m][k];
                let norm = e.norm();
                let phase = if norm > 0.0 { e / norm } else { Complex64::new(1.0, 0.0) };
                *c = phase * mag.get(k, m);
            }
        }
        audio = istft(&frames, work_len);
    }
    audio.truncate(len);
    AudioBuffer::new(audio)
}

/// Griffin-Lim preview peak-normalized to 0.95. Near-silent input stays silent.
pub fn griffin_lim_preview(s: &MelSpectrogram, iterations: usize) -> AudioBuffer {
    let mut out = griffin_lim_raw(s, iterations);
    if out.peak() >= SILENCE_PEAK {
        out.normalize_peak(PREVIEW_PEAK);
    }
    out
}
