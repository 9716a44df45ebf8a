//! Signal-processing kernels shared by training, evaluation and synthesis.
//!
//! Everything runs at a fixed 16 kHz. Spectral frames are centered on multiples
//! of the hop, so a signal of `n` samples yields `ceil(n / hop)` frames.

mod cqt;
mod griffin_lim;
mod mel;
mod mulaw;
mod stats;
mod stft;
pub mod wav;

use thiserror::Error;

pub use cqt::{cqt_bin_frequency, cqt_log_mag, CqtSpectrogram, CQT_BINS, CQT_BINS_PER_OCTAVE, CQT_HOP};
pub use griffin_lim::{griffin_lim_preview, griffin_lim_raw};
pub use mel::{
    mel_center_frequencies, mel_filterbank, mel_spectrogram, mel_to_hz, hz_to_mel, tanh_log_compress,
    tanh_log_expand, MelSpectrogram, MEL_FLOOR, N_MELS,
};
pub use mulaw::{mulaw_decode, mulaw_decode_checked, mulaw_encode, mulaw_encode_all, MulawCodes, MULAW_LEVELS, MULAW_SILENCE};
pub use stats::{mean_energy, pearson, spectral_centroid};
pub use stft::{istft, stft_complex, stft_mag, n_frames, StftFrames, N_BINS};
pub use wav::{read_wav, read_wav_from, wav_bytes, write_wav, write_wav_to};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 1024;
pub const HOP: usize = 128;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than the required {min}")]
    TooShort { len: usize, min: usize },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sequence")]
    Empty,
    #[error("zero variance: correlation is undefined")]
    ZeroVariance,
    #[error("mu-law code {0} out of range 0..=255")]
    CodeOutOfRange(usize),
    #[error("unsupported WAV format: {0}")]
    WavFormat(String),
    #[error("WAV i/o: {0}")]
    Wav(#[from] hound::Error),
}

/// Mono audio at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn silence(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Scales so the absolute peak equals `target`; silence is left alone.
    pub fn normalize_peak(&mut self, target: f64) {
        let peak = self.peak();
        if peak > 0.0 {
            let g = target / peak;
            self.samples.iter_mut().for_each(|x| *x *= g);
        }
    }
}

/// A pure sine of the given frequency and amplitude.
pub fn sine(freq: f64, amplitude: f64, len: usize) -> AudioBuffer {
    let sr = f64::from(SAMPLE_RATE);
    AudioBuffer::new(
        (0..len)
            .map(|n| amplitude * (2.0 * std::f64::consts::PI * freq * n as f64 / sr).sin())
            .collect(),
    )
}
