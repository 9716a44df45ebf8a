//! Deterministic additive synthesis of note lists.

use std::f64::consts::PI;

use super::patch::InstrumentPatch;
use crate::dsp::{AudioBuffer, SAMPLE_RATE};
use crate::midi::NoteEvent;

/// Peak level of every rendered track.
pub const TRACK_PEAK: f64 = 0.9;

/// Partials at or above this fraction of the sample rate are dropped.
const MAX_PARTIAL_FRACTION: f64 = 0.45;

pub fn pitch_frequency(pitch: u8) -> f64 {
    440.0 * 2f64.powf((f64::from(pitch) - 69.0) / 12.0)
}

/// Sum of all notes before peak normalization.
pub fn render_unnormalized(notes: &[NoteEvent], patch: &InstrumentPatch, len: usize) -> AudioBuffer {
    let sr = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0; len];
    for note in notes.iter().filter(|n| n.is_valid()) {
        let f0 = pitch_frequency(note.pitch);
        let gain = f64::from(note.velocity) / 127.0;
        let partials: Vec<(f64, f64)> = patch
            .harmonics
            .iter()
            .filter(|&&(k, a)| a > 0.0 && f64::from(k) * f0 < MAX_PARTIAL_FRACTION * sr)
            .map(|&(k, a)| (2.0 * PI * f64::from(k) * f0 / sr, patch.partial_amplitude(k, a)))
            .collect();
        let start = (note.onset * sr).round() as usize;
        let held = note.offset - note.onset;
        let end = (((note.offset + patch.release) * sr).round() as usize).min(len);
        for (n, slot) in out.iter_mut().enumerate().take(end).skip(start) {
            let i = (n - start) as f64;
            let env = patch.envelope(i / sr, held);
            if env == 0.0 {
                continue;
            }
            let wave: f64 = partials.iter().map(|&(omega, amp)| amp * (omega * i).sin()).sum();
            *slot += gain * env * wave;
        }
    }
    AudioBuffer::new(out)
}

/// Renders `len` samples with the track peak normalized to [`TRACK_PEAK`].
pub fn render(notes: &[NoteEvent], patch: &InstrumentPatch, len: usize) -> AudioBuffer {
    let mut audio = render_unnormalized(notes, patch, len);
    audio.normalize_peak(TRACK_PEAK);
    audio
}

/// Samples needed to hold every note including its release.
pub fn rendered_length(notes: &[NoteEvent], patch: &InstrumentPatch) -> usize {
    let end = notes.iter().map(|n| n.offset + patch.release).fold(0.0, f64::max);
    (end * f64::from(SAMPLE_RATE)).ceil() as usize
}
