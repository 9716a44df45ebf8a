//! Desk-scale training corpus: instrument patches, the additive renderer and
//! generated MIDI tracks.

pub mod corpus;
pub mod dataset;
pub mod patch;
pub mod render;
pub mod smf;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dsp::DspError;
use crate::midi::MidiError;

pub use corpus::{
    generate_corpus, generate_track, patch_probe_stats, validation_count, CorpusConfig, DatasetManifest, ManifestEntry, Split,
    MANIFEST_FILE,
};
pub use dataset::{roll_step_seconds, Corpus, CorpusTrack, Example, Render};
pub use patch::{builtin_patch_bank, probe_notes, InstrumentPatch, PATCH_BANK_VERSION, PROBE_SECONDS};
pub use render::{pitch_frequency, render, render_unnormalized, rendered_length, TRACK_PEAK};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Midi { path: PathBuf, source: MidiError },
    #[error("{path}: {source}")]
    Dsp { path: PathBuf, source: DspError },
    #[error(transparent)]
    Analysis(#[from] DspError),
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("slice at sample {offset} of length {length} is not aligned to the 128-sample hop")]
    Misaligned { offset: usize, length: usize },
    #[error("slice at sample {offset} of length {length} exceeds the {available} available samples")]
    OutOfRange { offset: usize, length: usize, available: usize },
    #[error("a corpus needs at least 2 tracks, got {0}")]
    TooFewTracks(usize),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[cfg(test)]
mod tests;
