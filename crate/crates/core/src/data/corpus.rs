//! Generated MIDI tracks rendered with every patch, plus the manifest that
//! indexes them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patch::{builtin_patch_bank, probe_notes, InstrumentPatch, PATCH_BANK_VERSION, PROBE_SECONDS};
use super::render::render;
use super::smf::SmfWriter;
use super::DataError;
use crate::dsp::{mean_energy, mel_spectrogram, spectral_centroid, write_wav, SAMPLE_RATE};
use crate::midi::{parse_midi, NoteEvent};

const TICKS_PER_QUARTER: u16 = 480;
const BPM: f64 = 120.0;
/// Ticks per second at the corpus tempo.
const TICKS_PER_SECOND: f64 = 960.0;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PATCH_REPORT_FILE: &str = "patches.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Paths are relative to the manifest directory.
    pub midi: PathBuf,
    pub instrument: usize,
    pub audio: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub patch_bank_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("# seed {}\n# patch_bank {}\n", self.seed, self.patch_bank_version);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.midi.display(),
                e.instrument,
                e.audio.display(),
                e.split
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self, DataError> {
        let mut seed = None;
        let mut version = None;
        let mut entries = Vec::new();
        let bad = |line: usize, detail: String| DataError::Manifest { line, detail };
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, value) = rest.split_once(' ').ok_or_else(|| bad(n, "malformed header".into()))?;
                let parsed = value.trim().parse::<u64>().map_err(|e| bad(n, e.to_string()))?;
                match key {
                    "seed" => seed = Some(parsed),
                    "patch_bank" => version = Some(parsed as u32),
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [midi, instrument, audio, split] = fields[..] else {
                return Err(bad(n, format!("expected 4 tab-separated fields, found {}", fields.len())));
            };
            entries.push(ManifestEntry {
                midi: PathBuf::from(midi),
                instrument: instrument.parse().map_err(|_| bad(n, format!("bad instrument `{instrument}`")))?,
                audio: PathBuf::from(audio),
                split: split.parse().map_err(|e| bad(n, e))?,
            });
        }
        Ok(Self {
            root: root.into(),
            seed: seed.ok_or_else(|| bad(0, "missing seed header".into()))?,
            patch_bank_version: version.ok_or_else(|| bad(0, "missing patch_bank header".into()))?,
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::io(path, source))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self) -> Result<PathBuf, DataError> {
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|source| DataError::io(&path, source))?;
        Ok(path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn instruments(&self) -> usize {
        self.entries.iter().map(|e| e.instrument + 1).max().unwrap_or(0)
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_tracks: usize,
    pub seed: u64,
    pub track_seconds: f64,
}

impl CorpusConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_tracks: 24,
            seed,
            track_seconds: 30.0,
        }
    }
}

const SCALES: [&[u8]; 3] = [&[0, 2, 4, 5, 7, 9, 11], &[0, 2, 3, 5, 7, 8, 10], &[0, 2, 4, 7, 9]];
const DURATION_UNITS: [u32; 8] = [1, 1, 2, 2, 2, 3, 4, 6];

fn ticks(seconds: f64) -> f64 {
    (seconds * TICKS_PER_SECOND).round() / TICKS_PER_SECOND
}

/// A melodic random walk over a scale with occasional dyads, rests and
/// repeated notes, some played legato so consecutive notes touch.
pub fn generate_track(rng: &mut impl Rng, seconds: f64) -> Vec<NoteEvent> {
    let scale = SCALES[rng.gen_range(0..SCALES.len())];
    let root = rng.gen_range(48u8..=60);
    let unit = [0.125, 0.1875, 0.25][rng.gen_range(0..3)];
    let degrees: Vec<u8> = (0..3u8)
        .flat_map(|octave| scale.iter().map(move |&s| root + 12 * octave + s))
        .collect();
    let mut idx = rng.gen_range(0..scale.len()) + scale.len() / 2;
    let mut notes = Vec::new();
    let mut t = ticks(rng.gen_range(0.05..0.3));
    while t < seconds - 0.3 {
        let dur = unit * f64::from(DURATION_UNITS[rng.gen_range(0..DURATION_UNITS.len())]);
        if rng.gen_bool(0.1) {
            t = ticks(t + dur);
            continue;
        }
        if !rng.gen_bool(0.2) {
            let step: i64 = rng.gen_range(-2..=2);
            idx = (idx as i64 + step).clamp(0, degrees.len() as i64 - 1) as usize;
        }
        let held = if rng.gen_bool(0.45) { dur } else { dur * rng.gen_range(0.4..0.9) };
        let end = ticks((t + held).min(seconds));
        let velocity = rng.gen_range(35u8..=120);
        notes.push(NoteEvent::new(degrees[idx], velocity, t, end));
        if rng.gen_bool(0.15) {
            let above = (idx + 2).min(degrees.len() - 1);
            if above != idx {
                notes.push(NoteEvent::new(degrees[above], velocity.saturating_sub(10).max(1), t, end));
            }
        }
        t = ticks(t + dur);
    }
    notes
}

/// Validation tracks for `n` tracks, in the 320:14 train/validation ratio and
/// at least one.
pub fn validation_count(n_tracks: usize) -> usize {
    ((n_tracks as f64 * 14.0 / 334.0).round() as usize).clamp(1, n_tracks - 1)
}

/// Probe statistics per patch: `(name, spectral centroid Hz, mean energy dB)`.
pub fn patch_probe_stats(bank: &[InstrumentPatch]) -> Result<Vec<(String, f64, f64)>, DataError> {
    let len = (PROBE_SECONDS * f64::from(SAMPLE_RATE)) as usize;
    bank.iter()
        .map(|p| {
            let mel = mel_spectrogram(&render(&probe_notes(), p, len))?;
            Ok((p.name.clone(), spectral_centroid(&mel), mean_energy(&mel)))
        })
        .collect()
}

/// Writes `n_tracks` MIDI files, one WAV per (track, patch), the manifest and
/// a patch statistics report under `out_dir`.
pub fn generate_corpus(config: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    if config.n_tracks < 2 {
        return Err(DataError::TooFewTracks(config.n_tracks));
    }
    let out = out_dir.as_ref();
    for sub in ["midi", "audio"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|source| DataError::io(&dir, source))?;
    }
    let bank = builtin_patch_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..config.n_tracks).collect();
    order.shuffle(&mut rng);
    let validation: Vec<usize> = order[..validation_count(config.n_tracks)].to_vec();
    let len = (config.track_seconds * f64::from(SAMPLE_RATE)).round() as usize;

    let mut entries = Vec::new();
    for track in 0..config.n_tracks {
        let notes = generate_track(&mut rng, config.track_seconds);
        let midi_rel = PathBuf::from(format!("midi/track{track:03}.mid"));
        let midi_path = out.join(&midi_rel);
        let bytes = SmfWriter::from_notes(&notes, BPM, TICKS_PER_QUARTER).to_bytes();
        fs::write(&midi_path, &bytes).map_err(|source| DataError::io(&midi_path, source))?;
        // Render what a reader of the file will see, so rolls and audio align.
        let parsed = parse_midi(&bytes).map_err(|source| DataError::Midi {
            path: midi_path.clone(),
            source,
        })?;
        let split = if validation.contains(&track) { Split::Validation } else { Split::Train };
        for (instrument, patch) in bank.iter().enumerate() {
            let audio_rel = PathBuf::from(format!("audio/track{track:03}_p{instrument:02}.wav"));
            let audio_path = out.join(&audio_rel);
            write_wav(&audio_path, &render(&parsed.notes, patch, len)).map_err(|source| DataError::Dsp {
                path: audio_path.clone(),
                source,
            })?;
            entries.push(ManifestEntry {
                midi: midi_rel.clone(),
                instrument,
                audio: audio_rel,
                split,
            });
        }
    }

    let mut report = String::from("# patch\tcentroid_hz\tmean_energy_db\n");
    for (name, centroid, energy) in patch_probe_stats(&bank)? {
        report.push_str(&format!("{name}\t{centroid:.3}\t{energy:.3}\n"));
    }
    let report_path = out.join(PATCH_REPORT_FILE);
    fs::write(&report_path, report).map_err(|source| DataError::io(&report_path, source))?;

    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        seed: config.seed,
        patch_bank_version: PATCH_BANK_VERSION,
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}
