//! In-memory corpus on the shared 128-sample frame grid.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use super::corpus::{DatasetManifest, Split};
use super::DataError;
use crate::dsp::{mel_spectrogram, mulaw_encode_all, read_wav, AudioBuffer, MelSpectrogram, HOP, MULAW_SILENCE, SAMPLE_RATE};
use crate::matrix::Matrix;
use crate::midi::{concat_input, encode_piano_roll, parse_midi, NoteEvent};

/// Roll step in seconds: one hop at the model sample rate.
pub fn roll_step_seconds() -> f64 {
    HOP as f64 / f64::from(SAMPLE_RATE)
}

/// One MIDI file's `176 x T` onset/frame input.
#[derive(Debug, Clone)]
pub struct CorpusTrack {
    pub name: String,
    pub notes: Vec<NoteEvent>,
    pub input: Matrix,
    pub split: Split,
}

/// One track rendered with one instrument.
#[derive(Debug, Clone)]
pub struct Render {
    pub track: usize,
    pub instrument: usize,
    pub split: Split,
    /// `80 x T` linear Mel spectrogram.
    pub mel: MelSpectrogram,
    /// `T * 128` μ-law codes.
    pub codes: Vec<u8>,
    /// Source WAV when loaded from a manifest.
    pub audio_path: Option<PathBuf>,
}

impl Render {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }
}

/// Aligned training slice: roll, Mel target and audio codes.
#[derive(Debug, Clone)]
pub struct Example {
    pub instrument: usize,
    /// First sample of the slice within its render, after any context.
    pub offset: usize,
    pub input: Matrix,
    pub mel: MelSpectrogram,
    pub codes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub tracks: Vec<CorpusTrack>,
    pub renders: Vec<Render>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a track; returns its index.
    pub fn add_track(&mut self, name: impl Into<String>, notes: Vec<NoteEvent>, frames: usize, split: Split) -> usize {
        let roll = encode_piano_roll(&notes, roll_step_seconds(), frames.max(1));
        self.tracks.push(CorpusTrack {
            name: name.into(),
            notes,
            input: concat_input(&roll),
            split,
        });
        self.tracks.len() - 1
    }

    /// Adds a rendering of `track`, truncated to the track's frame count.
    pub fn add_render(&mut self, track: usize, instrument: usize, audio: &AudioBuffer, audio_path: Option<PathBuf>) -> Result<usize, DataError> {
        let frames = self.tracks[track].input.cols();
        let mut samples = audio.samples.clone();
        samples.resize(frames * HOP, 0.0);
        let audio = AudioBuffer::new(samples);
        let mel = mel_spectrogram(&audio)?;
        self.renders.push(Render {
            track,
            instrument,
            split: self.tracks[track].split,
            mel,
            codes: mulaw_encode_all(&audio.samples).codes,
            audio_path,
        });
        Ok(self.renders.len() - 1)
    }

    /// Loads every manifest entry; each MIDI file is parsed once.
    pub fn load(manifest: &DatasetManifest) -> Result<Self, DataError> {
        let mut corpus = Corpus::new();
        let mut by_midi: HashMap<PathBuf, usize> = HashMap::new();
        for entry in &manifest.entries {
            let audio_path = manifest.resolve(&entry.audio);
            let audio = read_wav(&audio_path).map_err(|source| DataError::Dsp {
                path: audio_path.clone(),
                source,
            })?;
            let track = match by_midi.get(&entry.midi) {
                Some(&t) => t,
                None => {
                    let midi_path = manifest.resolve(&entry.midi);
                    let bytes = fs::read(&midi_path).map_err(|source| DataError::io(&midi_path, source))?;
                    let notes = parse_midi(&bytes)
                        .map_err(|source| DataError::Midi { path: midi_path, source })?
                        .notes;
                    let t = corpus.add_track(entry.midi.display().to_string(), notes, audio.len() / HOP, entry.split);
                    by_midi.insert(entry.midi.clone(), t);
                    t
                }
            };
            corpus
                .add_render(track, entry.instrument, &audio, Some(audio_path.clone()))
                .map_err(|e| match e {
                    DataError::Analysis(source) => DataError::Dsp { path: audio_path, source },
                    other => other,
                })?;
        }
        Ok(corpus)
    }

    /// Like [`Self::example`] with `context` extra samples of history in
    /// front; history before the render is silence.
    pub fn example_with_context(&self, index: usize, offset: usize, length: usize, context: usize) -> Result<Example, DataError> {
        if context % HOP != 0 {
            return Err(DataError::Misaligned { offset, length: context });
        }
        let pad = context.saturating_sub(offset);
        let mut example = self.example(index, offset + pad - context, length + context - pad)?;
        if pad > 0 {
            let frames = pad / HOP;
            let input = Matrix::zeros(example.input.rows(), frames);
            let mel = Matrix::zeros(example.mel.values.rows(), frames);
            example.input = Matrix::hstack(&[&input, &example.input]);
            example.mel = MelSpectrogram::from_linear(Matrix::hstack(&[&mel, &example.mel.values]));
            example.codes.splice(0..0, std::iter::repeat(MULAW_SILENCE).take(pad));
        }
        example.offset = offset;
        Ok(example)
    }

    pub fn instruments(&self) -> usize {
        self.renders.iter().map(|r| r.instrument + 1).max().unwrap_or(0)
    }

    /// Indices of renders in `split`.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.renders.len()).filter(|&i| self.renders[i].split == split).collect()
    }

    /// Slice of render `index` starting at sample `offset`, `length` samples
    /// long; both must be multiples of the hop.
    pub fn example(&self, index: usize, offset: usize, length: usize) -> Result<Example, DataError> {
        if offset % HOP != 0 || length % HOP != 0 || length == 0 {
            return Err(DataError::Misaligned { offset, length });
        }
        let render = &self.renders[index];
        let available = render.frames() * HOP;
        if offset + length > available {
            return Err(DataError::OutOfRange {
                offset,
                length,
                available,
            });
        }
        let (start, frames) = (offset / HOP, length / HOP);
        let input = self.tracks[render.track].input.slice_cols(start, frames);
        let mel = MelSpectrogram::from_linear(render.mel.values.slice_cols(start, frames));
        if input.cols() != mel.frames() {
            return Err(DataError::Misaligned { offset, length });
        }
        Ok(Example {
            instrument: render.instrument,
            offset,
            input,
            mel,
            codes: render.codes[offset..offset + length].to_vec(),
        })
    }
}
