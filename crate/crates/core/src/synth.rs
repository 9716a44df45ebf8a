//! End-to-end synthesis: MIDI and a point in timbre space to Mel frames and audio.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{load_checkpoint, CheckpointError};
use crate::data::{builtin_patch_bank, roll_step_seconds};
use crate::dsp::{griffin_lim_preview, AudioBuffer, MelSpectrogram, HOP, SAMPLE_RATE};
use crate::eval::probe_input;
use crate::matrix::Matrix;
use crate::mel2mel::{Mel2Mel, ModelError};
use crate::midi::{concat_input, encode_piano_roll, parse_midi, MidiError, NoteEvent};
use crate::wavenet::{sample, InferenceWeights, SamplingMode, WaveNet, WaveNetError};

/// Silence appended after the last note-off so releases can ring out.
pub const TAIL_SECONDS: f64 = 0.5;
pub const PREVIEW_ITERATIONS: usize = 60;

pub const MEL2MEL_CHECKPOINT: &str = "mel2mel.ckpt";
pub const WAVENET_CHECKPOINT: &str = "wavenet.ckpt";
/// One instrument name per line, in embedding-table order.
pub const INSTRUMENT_NAMES: &str = "instruments.txt";

#[derive(Debug, Clone, PartialEq)]
pub enum MidiSource {
    /// Standard MIDI File bytes.
    Smf(Vec<u8>),
    /// The built-in middle-C probe excerpt.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Instrument(usize),
    Vector(Vec<f64>),
    /// `(1 - lambda) * from + lambda * to` between two learned instruments.
    Morph { from: usize, to: usize, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vocoder {
    /// Griffin-Lim phase reconstruction.
    #[default]
    Preview,
    Wavenet,
}

impl fmt::Display for Vocoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Vocoder::Preview => "preview",
            Vocoder::Wavenet => "wavenet",
        })
    }
}

impl FromStr for Vocoder {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preview" => Ok(Vocoder::Preview),
            "wavenet" => Ok(Vocoder::Wavenet),
            other => Err(SynthError::Request(format!("unknown vocoder `{other}`, expected wavenet or preview"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub midi: MidiSource,
    pub embedding: EmbeddingSpec,
    /// `None` returns the Mel prediction without audio.
    pub vocoder: Option<Vocoder>,
    /// WaveNet sampling temperature; zero samples the most likely code.
    pub temperature: f64,
    pub seed: u64,
}

/// Wall-clock milliseconds spent in each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub input_ms: f64,
    pub mel_ms: f64,
    pub vocoder_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResponse {
    /// `80 x T` compressed Mel prediction.
    pub mel: Matrix,
    /// `T * 128` samples when a vocoder ran.
    pub waveform: Option<AudioBuffer>,
    pub timings: StageTimings,
}

/// How a caller should classify a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    BadRequest,
    Unavailable,
    Internal,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("embedding has {got} dimensions, the model expects {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("instrument {id} out of range (model has {count})")]
    InstrumentOutOfRange { id: usize, count: usize },
    #[error("no {0} checkpoint is loaded")]
    MissingCheckpoint(&'static str),
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    WaveNet(#[from] WaveNetError),
}

impl SynthError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SynthError::Midi(_)
            | SynthError::Request(_)
            | SynthError::EmbeddingDim { .. }
            | SynthError::InstrumentOutOfRange { .. } => ErrorClass::BadRequest,
            SynthError::MissingCheckpoint(_) => ErrorClass::Unavailable,
            _ => ErrorClass::Internal,
        }
    }
}

/// `176 x T` input covering every note plus [`TAIL_SECONDS`].
pub fn notes_input(notes: &[NoteEvent]) -> Matrix {
    let end = notes.iter().map(|n| n.offset).fold(0.0, f64::max) + TAIL_SECONDS;
    let frames = ((end * f64::from(SAMPLE_RATE)) / HOP as f64).ceil().max(1.0) as usize;
    concat_input(&encode_piano_roll(notes, roll_step_seconds(), frames))
}

/// A loaded model snapshot shared read-only by every request.
pub struct Synthesizer {
    mel2mel: Option<Mel2Mel>,
    wavenet: Option<InferenceWeights>,
    names: Vec<String>,
}

impl Synthesizer {
    /// Missing names fall back to the built-in patch names.
    pub fn new(mel2mel: Option<Mel2Mel>, wavenet: Option<&WaveNet>, names: Vec<String>) -> Self {
        let count = mel2mel.as_ref().map_or(0, |m| m.config.n_instruments);
        let bank = builtin_patch_bank();
        let names = (0..count)
            .map(|i| {
                names
                    .get(i)
                    .cloned()
                    .or_else(|| bank.get(i).map(|p| p.name.clone()))
                    .unwrap_or_else(|| format!("instrument {i}"))
            })
            .collect();
        Self {
            mel2mel,
            wavenet: wavenet.map(WaveNet::inference),
            names,
        }
    }

    /// Loads whichever of the standard checkpoint files exist in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, SynthError> {
        let dir = dir.as_ref();
        let load = |name: &str| {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            load_checkpoint(&path).map(Some).map_err(|source| SynthError::Checkpoint { path, source })
        };
        let mel2mel = load(MEL2MEL_CHECKPOINT)?.map(|ck| Mel2Mel::from_checkpoint(&ck)).transpose()?;
        let wavenet = load(WAVENET_CHECKPOINT)?.map(|ck| WaveNet::from_checkpoint(&ck)).transpose()?;
        let names_path = dir.join(INSTRUMENT_NAMES);
        let names = if names_path.exists() {
            std::fs::read_to_string(&names_path)
                .map_err(|source| SynthError::Io {
                    path: names_path.clone(),
                    source,
                })?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self::new(mel2mel, wavenet.as_ref(), names))
    }

    pub fn mel2mel(&self) -> Option<&Mel2Mel> {
        self.mel2mel.as_ref()
    }

    pub fn has_wavenet(&self) -> bool {
        self.wavenet.is_some()
    }

    fn model(&self) -> Result<&Mel2Mel, SynthError> {
        self.mel2mel.as_ref().ok_or(SynthError::MissingCheckpoint("mel2mel"))
    }

    /// Instrument names with their learned coordinates.
    pub fn instruments(&self) -> Vec<(String, Vec<f64>)> {
        let Some(model) = &self.mel2mel else { return Vec::new() };
        let table = model.embedding_table();
        self.names
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), table.row(i).to_vec()))
            .collect()
    }

    fn learned(&self, id: usize) -> Result<Vec<f64>, SynthError> {
        let model = self.model()?;
        model.embedding(id).map_err(|_| SynthError::InstrumentOutOfRange {
            id,
            count: model.config.n_instruments,
        })
    }

    /// The embedding point a specification denotes.
    pub fn resolve(&self, spec: &EmbeddingSpec) -> Result<Vec<f64>, SynthError> {
        let expected = self.model()?.config.embed_dim;
        match spec {
            EmbeddingSpec::Instrument(id) => self.learned(*id),
            EmbeddingSpec::Vector(v) if v.len() != expected => Err(SynthError::EmbeddingDim { expected, got: v.len() }),
            EmbeddingSpec::Vector(v) if v.iter().any(|x| !x.is_finite()) => {
                Err(SynthError::Request("embedding coordinates must be finite".into()))
            }
            EmbeddingSpec::Vector(v) => Ok(v.clone()),
            EmbeddingSpec::Morph { from, to, lambda } => {
                if !(0.0..=1.0).contains(lambda) {
                    return Err(SynthError::Request(format!("morph lambda {lambda} is outside [0, 1]")));
                }
                let (a, b) = (self.learned(*from)?, self.learned(*to)?);
                Ok(a.iter().zip(&b).map(|(&p, &q)| (1.0 - lambda) * p + lambda * q).collect())
            }
        }
    }

    pub fn synthesize(&self, request: &SynthesisRequest) -> Result<SynthesisResponse, SynthError> {
        let model = self.model()?;
        if !(request.temperature >= 0.0 && request.temperature.is_finite()) {
            return Err(SynthError::Request(format!("temperature {} must be a non-negative number", request.temperature)));
        }
        if request.vocoder == Some(Vocoder::Wavenet) && self.wavenet.is_none() {
            return Err(SynthError::MissingCheckpoint("wavenet"));
        }
        let mut timings = StageTimings::default();
        let clock = Instant::now();
        let input = match &request.midi {
            MidiSource::Smf(bytes) => notes_input(&parse_midi(bytes)?.notes),
            MidiSource::Probe => probe_input(),
        };
        let point = self.resolve(&request.embedding)?;
        timings.input_ms = clock.elapsed().as_secs_f64() * 1e3;

        let clock = Instant::now();
        let mel = model.predict(&input, &point)?;
        timings.mel_ms = clock.elapsed().as_secs_f64() * 1e3;

        let clock = Instant::now();
        let waveform = match request.vocoder {
            None => None,
            Some(Vocoder::Preview) => Some(griffin_lim_preview(&MelSpectrogram::from_compressed(&mel), PREVIEW_ITERATIONS)),
            Some(Vocoder::Wavenet) => {
                let mode = if request.temperature == 0.0 {
                    SamplingMode::Argmax
                } else {
                    SamplingMode::Temperature(request.temperature)
                };
                let weights = self.wavenet.as_ref().ok_or(SynthError::MissingCheckpoint("wavenet"))?;
                Some(sample(weights, &mel, mode, request.seed)?)
            }
        };
        timings.vocoder_ms = clock.elapsed().as_secs_f64() * 1e3;
        Ok(SynthesisResponse { mel, waveform, timings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::smf::SmfWriter;
    use crate::mel2mel::{Mel2MelConfig, Variant};
    use crate::wavenet::WaveNetConfig;

    fn synthesizer(with_wavenet: bool) -> Synthesizer {
        let config = Mel2MelConfig {
            n_instruments: 3,
            embed_dim: 2,
            hidden: 6,
            lstm_units: 3,
            variant: Variant::Proposed,
        };
        let wavenet = WaveNet::new(WaveNetConfig::tiny(2), 2).unwrap();
        Synthesizer::new(
            Some(Mel2Mel::new(config, 1).unwrap()),
            with_wavenet.then_some(&wavenet),
            vec!["a".into()],
        )
    }

    fn request(embedding: EmbeddingSpec, vocoder: Option<Vocoder>) -> SynthesisRequest {
        SynthesisRequest {
            midi: MidiSource::Probe,
            embedding,
            vocoder,
            temperature: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn preview_response_shapes() {
        let s = synthesizer(false);
        let r = s.synthesize(&request(EmbeddingSpec::Instrument(0), Some(Vocoder::Preview))).unwrap();
        assert_eq!(r.mel.rows(), 80);
        assert_eq!(r.waveform.unwrap().len(), r.mel.cols() * HOP);
        assert!(s.synthesize(&request(EmbeddingSpec::Instrument(0), None)).unwrap().waveform.is_none());
    }

    #[test]
    fn equivalent_embeddings_give_identical_mels() {
        let s = synthesizer(false);
        let by_id = s.synthesize(&request(EmbeddingSpec::Instrument(0), None)).unwrap().mel;
        let row = s.mel2mel().unwrap().embedding(0).unwrap();
        let by_vector = s.synthesize(&request(EmbeddingSpec::Vector(row), None)).unwrap().mel;
        assert_eq!(by_id, by_vector);
        let morph = EmbeddingSpec::Morph { from: 0, to: 2, lambda: 0.0 };
        assert_eq!(s.synthesize(&request(morph, None)).unwrap().mel, by_id);
    }

    #[test]
    fn names_fall_back_to_the_patch_bank() {
        let s = synthesizer(false);
        let names: Vec<String> = s.instruments().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["a".to_string(), "piano".into(), "organ".into()]);
        assert!(s.instruments().iter().all(|(_, c)| c.len() == 2));
    }

    #[test]
    fn midi_input_covers_notes_and_tail() {
        let notes = vec![NoteEvent::new(60, 90, 0.0, 0.5)];
        let bytes = SmfWriter::from_notes(&notes, 120.0, 480).to_bytes();
        let s = synthesizer(false);
        let mut req = request(EmbeddingSpec::Instrument(1), None);
        req.midi = MidiSource::Smf(bytes);
        assert_eq!(s.synthesize(&req).unwrap().mel.cols(), 125);
    }

    #[test]
    fn errors_are_classified() {
        let s = synthesizer(false);
        let class = |req: SynthesisRequest| s.synthesize(&req).unwrap_err().class();
        let mut bad_midi = request(EmbeddingSpec::Instrument(0), None);
        bad_midi.midi = MidiSource::Smf(b"MThx".to_vec());
        assert_eq!(class(bad_midi), ErrorClass::BadRequest);
        assert_eq!(class(request(EmbeddingSpec::Vector(vec![0.1]), None)), ErrorClass::BadRequest);
        assert_eq!(class(request(EmbeddingSpec::Instrument(3), None)), ErrorClass::BadRequest);
        let lambda = EmbeddingSpec::Morph { from: 0, to: 1, lambda: 1.5 };
        assert_eq!(class(request(lambda, None)), ErrorClass::BadRequest);
        assert_eq!(class(request(EmbeddingSpec::Instrument(0), Some(Vocoder::Wavenet))), ErrorClass::Unavailable);
        let empty = Synthesizer::new(None, None, Vec::new());
        let err = empty.synthesize(&request(EmbeddingSpec::Instrument(0), None)).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Unavailable);
    }

    #[test]
    fn wavenet_output_is_seeded() {
        let s = synthesizer(true);
        let mut req = request(EmbeddingSpec::Instrument(1), Some(Vocoder::Wavenet));
        req.midi = MidiSource::Smf(SmfWriter::from_notes(&[NoteEvent::new(64, 100, 0.0, 0.05)], 120.0, 480).to_bytes());
        let a = s.synthesize(&req).unwrap();
        let b = s.synthesize(&req).unwrap();
        assert_eq!(a.waveform, b.waveform);
        assert_eq!(a.waveform.as_ref().unwrap().len(), a.mel.cols() * HOP);
        req.seed = 8;
        assert_ne!(s.synthesize(&req).unwrap().waveform, a.waveform);
        req.temperature = -1.0;
        assert_eq!(s.synthesize(&req).unwrap_err().class(), ErrorClass::BadRequest);
    }
}
