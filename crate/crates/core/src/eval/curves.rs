//! Per-bin CQT Pearson correlation between original and reconstructed audio.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::roll_step_seconds;
use crate::dsp::{
    cqt_log_mag, mel_spectrogram, mulaw_decode, mulaw_encode, pearson, tanh_log_compress, AudioBuffer, DspError,
    CQT_BINS, CQT_BINS_PER_OCTAVE, HOP,
};
use crate::matrix::Matrix;
use crate::mel2mel::{LossKind, Mel2Mel};
use crate::midi::{concat_input, encode_piano_roll, NoteEvent};
use crate::wavenet::{sample, InferenceWeights, SamplingMode};

pub const OCTAVES: usize = CQT_BINS / CQT_BINS_PER_OCTAVE;

/// Successive reconstructions of a track, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationStage {
    Original,
    MulawRoundtrip,
    WavenetGroundTruthMel,
    WavenetPredictedMel(LossKind),
}

impl DegradationStage {
    /// Every stage with one predicted-Mel stage per loss, in pipeline order.
    pub fn all() -> Vec<DegradationStage> {
        let mut stages = vec![Self::Original, Self::MulawRoundtrip, Self::WavenetGroundTruthMel];
        stages.extend(LossKind::ALL.map(Self::WavenetPredictedMel));
        stages
    }
}

impl fmt::Display for DegradationStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Original => f.write_str("original"),
            Self::MulawRoundtrip => f.write_str("mulaw_roundtrip"),
            Self::WavenetGroundTruthMel => f.write_str("wavenet_ground_truth_mel"),
            Self::WavenetPredictedMel(kind) => write!(f, "wavenet_predicted_mel({kind})"),
        }
    }
}

/// Pearson correlation of every CQT bin across time for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub stage: DegradationStage,
    /// `None` for the aggregate over all tracks.
    pub instrument: Option<usize>,
    pub tracks: usize,
    /// One value per CQT bin, each in `[-1, 1]`.
    pub bins: Vec<f64>,
}

impl CorrelationCurve {
    /// Mean over each 12-bin octave.
    pub fn octaves(&self) -> Vec<f64> {
        self.bins
            .chunks(CQT_BINS_PER_OCTAVE)
            .map(|o| o.iter().sum::<f64>() / o.len() as f64)
            .collect()
    }

    /// Mean of the octave values.
    pub fn mean(&self) -> f64 {
        let octaves = self.octaves();
        octaves.iter().sum::<f64>() / octaves.len() as f64
    }
}

/// An evaluation excerpt: the original audio and its aligned model input.
#[derive(Debug, Clone)]
pub struct EvalTrack {
    pub instrument: usize,
    /// `176 x T` onset/frame input.
    pub input: Matrix,
    /// `T * 128` samples.
    pub audio: AudioBuffer,
}

impl EvalTrack {
    /// Encodes `notes` on the frame grid of `audio`, padded to whole frames.
    pub fn new(instrument: usize, notes: &[NoteEvent], audio: &AudioBuffer) -> Self {
        let frames = audio.len().div_ceil(HOP).max(1);
        let mut samples = audio.samples.clone();
        samples.resize(frames * HOP, 0.0);
        let roll = encode_piano_roll(notes, roll_step_seconds(), frames);
        Self {
            instrument,
            input: concat_input(&roll),
            audio: AudioBuffer::new(samples),
        }
    }

    pub fn frames(&self) -> usize {
        self.input.cols()
    }
}

/// Trained networks the model stages draw on.
#[derive(Clone, Copy)]
pub struct EvalModels<'a> {
    pub wavenet: Option<&'a InferenceWeights>,
    pub mel2mel: &'a [(LossKind, &'a Mel2Mel)],
    pub sampling: SamplingMode,
    pub seed: u64,
}

impl<'a> EvalModels<'a> {
    fn mel2mel_for(&self, kind: LossKind) -> Option<&'a Mel2Mel> {
        self.mel2mel.iter().find(|(k, _)| *k == kind).map(|(_, m)| *m)
    }

    fn check(&self, stage: DegradationStage) -> Result<(), EvalError> {
        let missing = |what| EvalError::MissingModel {
            stage: stage.to_string(),
            what,
        };
        match stage {
            DegradationStage::Original | DegradationStage::MulawRoundtrip => Ok(()),
            DegradationStage::WavenetGroundTruthMel => self.wavenet.map(|_| ()).ok_or_else(|| missing("wavenet")),
            DegradationStage::WavenetPredictedMel(kind) => {
                self.wavenet.ok_or_else(|| missing("wavenet"))?;
                self.mel2mel_for(kind).map(|_| ()).ok_or_else(|| missing("mel2mel"))
            }
        }
    }

    fn reconstruct(&self, stage: DegradationStage, track: &EvalTrack, index: usize) -> Result<AudioBuffer, EvalError> {
        self.check(stage)?;
        let seed = self.seed.wrapping_add(index as u64);
        Ok(match stage {
            DegradationStage::Original => track.audio.clone(),
            DegradationStage::MulawRoundtrip => {
                AudioBuffer::new(track.audio.samples.iter().map(|&x| mulaw_decode(mulaw_encode(x))).collect())
            }
            DegradationStage::WavenetGroundTruthMel => {
                let mel = tanh_log_compress(&mel_spectrogram(&track.audio)?);
                sample(self.wavenet.expect("checked"), &mel, self.sampling, seed)?
            }
            DegradationStage::WavenetPredictedMel(kind) => {
                let model = self.mel2mel_for(kind).expect("checked");
                let mel = model.predict_instrument(&track.input, track.instrument)?;
                sample(self.wavenet.expect("checked"), &mel, self.sampling, seed)?
            }
        })
    }
}

/// Per-bin Pearson correlation across time of the two log-CQT spectrograms.
///
/// A bin that is constant in either signal has no defined correlation; it
/// scores 1 when both are constant and equal and 0 otherwise.
pub fn bin_correlations(original: &AudioBuffer, reconstructed: &AudioBuffer) -> Result<Vec<f64>, EvalError> {
    if original.len() != reconstructed.len() {
        return Err(DspError::LengthMismatch(original.len(), reconstructed.len()).into());
    }
    let a = cqt_log_mag(original)?;
    let b = cqt_log_mag(reconstructed)?;
    (0..CQT_BINS)
        .map(|k| {
            let (x, y) = (a.values.row(k), b.values.row(k));
            match pearson(x, y) {
                Ok(r) => Ok(r),
                Err(DspError::ZeroVariance) => Ok(if x == y { 1.0 } else { 0.0 }),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

fn mean_curve(stage: DegradationStage, instrument: Option<usize>, rows: &[&Vec<f64>]) -> CorrelationCurve {
    let bins = (0..CQT_BINS)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
        .collect();
    CorrelationCurve {
        stage,
        instrument,
        tracks: rows.len(),
        bins,
    }
}

/// For each stage, one curve per instrument present in `tracks` followed by
/// the aggregate; each curve is the mean of per-track correlations.
pub fn degradation_curves(
    tracks: &[EvalTrack],
    stages: &[DegradationStage],
    models: &EvalModels<'_>,
) -> Result<Vec<CorrelationCurve>, EvalError> {
    if tracks.is_empty() {
        return Err(EvalError::NoTracks);
    }
    for &stage in stages {
        models.check(stage)?;
    }
    let mut instruments: Vec<usize> = tracks.iter().map(|t| t.instrument).collect();
    instruments.sort_unstable();
    instruments.dedup();
    let mut curves = Vec::new();
    for &stage in stages {
        let per_track = tracks
            .iter()
            .enumerate()
            .map(|(i, t)| bin_correlations(&t.audio, &models.reconstruct(stage, t, i)?))
            .collect::<Result<Vec<_>, _>>()?;
        for &id in &instruments {
            let rows: Vec<&Vec<f64>> = per_track.iter().zip(tracks).filter(|(_, t)| t.instrument == id).map(|(r, _)| r).collect();
            curves.push(mean_curve(stage, Some(id), &rows));
        }
        curves.push(mean_curve(stage, None, &per_track.iter().collect::<Vec<_>>()));
    }
    Ok(curves)
}

/// The per-instrument curves of one stage.
pub fn per_instrument_breakdown(curves: &[CorrelationCurve], stage: DegradationStage) -> Vec<&CorrelationCurve> {
    curves
        .iter()
        .filter(|c| c.stage == stage && c.instrument.is_some())
        .collect()
}
