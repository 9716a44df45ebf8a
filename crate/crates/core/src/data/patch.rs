//! Parametric instrument patches for the additive renderer.

use serde::{Deserialize, Serialize};

use crate::midi::NoteEvent;

/// Bumped whenever a built-in patch changes, so manifests record which bank
/// rendered their audio.
pub const PATCH_BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPatch {
    pub name: String,
    /// `(partial index, relative amplitude)`; partial `k` sounds at `k * f0`.
    pub harmonics: Vec<(u32, f64)>,
    /// Linear attack time in seconds.
    pub attack: f64,
    /// Exponential decay rate toward the sustain level, per second.
    pub decay_rate: f64,
    /// Sustain level in `[0, 1]`.
    pub sustain: f64,
    /// Linear release time in seconds.
    pub release: f64,
    /// Extra attenuation per octave above the fundamental, in dB.
    pub rolloff_db_per_octave: f64,
}

impl InstrumentPatch {
    pub fn is_valid(&self) -> bool {
        self.harmonics.iter().all(|&(k, a)| k >= 1 && a >= 0.0 && a.is_finite())
            && self.attack >= 0.0
            && self.release >= 0.0
            && self.decay_rate >= 0.0
            && (0.0..=1.0).contains(&self.sustain)
    }

    /// Amplitude of partial `k` after the rolloff.
    pub fn partial_amplitude(&self, k: u32, amplitude: f64) -> f64 {
        amplitude * 10f64.powf(-self.rolloff_db_per_octave * f64::from(k).log2() / 20.0)
    }

    /// Envelope value `seconds` after the onset of a note held for `held`
    /// seconds.
    pub fn envelope(&self, seconds: f64, held: f64) -> f64 {
        let sustained = |t: f64| {
            if t < self.attack {
                t / self.attack
            } else {
                self.sustain + (1.0 - self.sustain) * (-self.decay_rate * (t - self.attack)).exp()
            }
        };
        if seconds < 0.0 {
            0.0
        } else if seconds < held {
            sustained(seconds)
        } else if self.release == 0.0 {
            0.0
        } else {
            (sustained(held) * (1.0 - (seconds - held) / self.release)).max(0.0)
        }
    }
}

fn patch(name: &str, harmonics: Vec<(u32, f64)>, adsr: (f64, f64, f64, f64), rolloff: f64) -> InstrumentPatch {
    let (attack, decay_rate, sustain, release) = adsr;
    InstrumentPatch {
        name: name.to_string(),
        harmonics,
        attack,
        decay_rate,
        sustain,
        release,
        rolloff_db_per_octave: rolloff,
    }
}

fn series(count: u32, amplitude: impl Fn(u32) -> f64) -> Vec<(u32, f64)> {
    (1..=count).map(|k| (k, amplitude(k))).collect()
}

/// Ten patches spread over the transient/sustained and dark/bright axes.
pub fn builtin_patch_bank() -> Vec<InstrumentPatch> {
    vec![
        patch("pluck", series(12, |k| 1.0 / f64::from(k)), (0.002, 9.0, 0.0, 0.04), 3.0),
        patch("piano", series(10, |k| 1.0 / f64::from(k * k).sqrt()), (0.004, 1.8, 0.0, 0.12), 8.0),
        patch(
            "organ",
            vec![(1, 1.0), (2, 0.8), (3, 0.6), (4, 0.5), (6, 0.4), (8, 0.3)],
            (0.01, 0.0, 1.0, 0.03),
            0.0,
        ),
        patch("saw lead", series(32, |k| 1.0 / f64::from(k)), (0.01, 1.0, 0.8, 0.08), 0.0),
        patch("flute", vec![(1, 1.0), (2, 0.06), (3, 0.02)], (0.06, 2.0, 0.9, 0.1), 0.0),
        patch("clarinet", series(15, |k| if k % 2 == 1 { 1.0 / f64::from(k) } else { 0.0 }), (0.03, 3.0, 0.85, 0.06), 2.0),
        patch("brass", series(16, |_| 1.0), (0.09, 2.5, 0.7, 0.1), 4.0),
        patch("marimba", vec![(1, 1.0), (4, 0.9), (10, 0.3)], (0.001, 3.5, 0.0, 0.05), 0.0),
        patch("strings", series(20, |k| 1.0 / f64::from(k)), (0.3, 0.5, 0.95, 0.3), 2.0),
        patch("pizzicato", series(6, |_| 1.0), (0.001, 18.0, 0.0, 0.02), 12.0),
    ]
}

/// Middle C at velocity 100, held 1 s, in a 1.5 s excerpt.
pub fn probe_notes() -> Vec<NoteEvent> {
    vec![NoteEvent::new(60, 100, 0.0, 1.0)]
}

/// Length of the probe excerpt in seconds.
pub const PROBE_SECONDS: f64 = 1.5;
