//! Timbre-conditioned MIDI-to-audio synthesis.
//!
//! The pipeline turns a note sequence into a dual onset/frame piano roll,
//! predicts an 80-band Mel spectrogram with a FiLM-conditioned recurrent network
//! driven by a learned instrument embedding, and renders audio with an
//! autoregressive WaveNet vocoder (or a Griffin-Lim preview).

pub mod autograd;
pub mod data;
pub mod dsp;
pub mod eval;
pub mod mel2mel;
pub mod matrix;
pub mod midi;
pub mod synth;
pub mod train;
pub mod wavenet;

pub use matrix::Matrix;
pub use midi::{NoteEvent, PianoRoll};
