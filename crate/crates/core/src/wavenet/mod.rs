//! Mel-conditioned autoregressive WaveNet over 8-bit μ-law codes.
//!
//! The input sequence is the target sequence delayed by one sample, starting
//! from the silence code, so the logits at position `t` see codes `< t` only.
//! The compressed Mel spectrogram is upsampled to one conditioning column per
//! sample by two transposed convolutions (window 16 stride 8, then window 32
//! stride 16) and injected into every gated layer.

mod sampler;

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Checkpoint, CheckpointError, Graph, ParamId, ParamStore, Var, IGNORE_TARGET};
use crate::dsp::{HOP, MULAW_LEVELS, MULAW_SILENCE, N_MELS};
use crate::matrix::Matrix;

pub use sampler::{
    bench_sampler, sample, sample_codes_cached, sample_codes_naive, BenchReport, ConditioningProjection, InferenceWeights,
    softmax, SamplerState, SamplingMode,
};

/// Upsampler stages as `(window, stride)`; strides multiply to the hop size.
pub const UPSAMPLE_STAGES: [(usize, usize); 2] = [(16, 8), (32, 16)];

#[derive(Debug, Error)]
pub enum WaveNetError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("conditioning has {cond} columns for {codes} codes")]
    LengthMismatch { codes: usize, cond: usize },
    #[error("sequence length {0} is not a positive multiple of {HOP}")]
    BadSequenceLength(usize),
    #[error("mel input has {got} rows, expected {N_MELS}")]
    MelRows { got: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { loss: f64, step: u64 },
    #[error("checkpoint holds a `{0}` model")]
    WrongKind(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveNetConfig {
    pub dilations: Vec<usize>,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub out_classes: usize,
    /// Width of the upsampled conditioning signal.
    pub cond_channels: usize,
}

fn doubling(max: usize, cycles: usize) -> Vec<usize> {
    let cycle: Vec<usize> = std::iter::successors(Some(1usize), |d| Some(d * 2)).take_while(|&d| d <= max).collect();
    cycle.iter().copied().cycle().take(cycle.len() * cycles).collect()
}

impl WaveNetConfig {
    /// 20 layers with dilations 1..512 twice, 64 residual and 256 skip channels.
    pub fn full() -> Self {
        Self {
            dilations: doubling(512, 2),
            residual_channels: 64,
            skip_channels: 256,
            out_classes: MULAW_LEVELS,
            cond_channels: N_MELS,
        }
    }

    /// 10 layers with dilations 1..16 twice and 32 residual channels.
    pub fn desk() -> Self {
        Self {
            dilations: doubling(16, 2),
            residual_channels: 32,
            skip_channels: 64,
            out_classes: MULAW_LEVELS,
            cond_channels: 32,
        }
    }

    /// Small configuration with the given dilation cycle repeated twice.
    pub fn tiny(max_dilation: usize) -> Self {
        Self {
            dilations: doubling(max_dilation, 2),
            residual_channels: 8,
            skip_channels: 16,
            out_classes: MULAW_LEVELS,
            cond_channels: 4,
        }
    }

    pub fn layers(&self) -> usize {
        self.dilations.len()
    }

    /// `1 + sum(dilations)`: how many input positions reach one output.
    pub fn receptive_field(&self) -> usize {
        1 + self.dilations.iter().sum::<usize>()
    }

    /// Hop-aligned history prepended to training slices: the receptive field
    /// plus one frame for the upsampler's edge.
    pub fn context_samples(&self) -> usize {
        (self.receptive_field() - 1).div_ceil(HOP) * HOP + HOP
    }

    pub fn validate(&self) -> Result<(), WaveNetError> {
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(WaveNetError::Config("dilations must be non-empty and positive".into()));
        }
        if self.residual_channels == 0 || self.skip_channels == 0 || self.cond_channels == 0 {
            return Err(WaveNetError::Config("channel counts must be positive".into()));
        }
        if self.out_classes != MULAW_LEVELS {
            return Err(WaveNetError::Config(format!("out_classes must be {MULAW_LEVELS}")));
        }
        Ok(())
    }
}

pub(crate) struct LayerIds {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub cond_w: ParamId,
    pub skip_w: ParamId,
    pub skip_b: ParamId,
    /// Absent on the last layer, whose residual output is never read.
    pub res: Option<(ParamId, ParamId)>,
}

pub(crate) struct Ids {
    pub embed: ParamId,
    pub up: Vec<(ParamId, ParamId)>,
    pub layers: Vec<LayerIds>,
    pub post1: (ParamId, ParamId),
    pub post2: (ParamId, ParamId),
}

pub struct WaveNet {
    pub config: WaveNetConfig,
    pub params: ParamStore,
    pub(crate) ids: Ids,
}

impl fmt::Debug for WaveNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveNet")
            .field("config", &self.config)
            .field("scalars", &self.params.scalar_count())
            .finish()
    }
}

impl Clone for WaveNet {
    fn clone(&self) -> Self {
        Self::from_params(self.config.clone(), self.params.clone()).expect("parameters already validated")
    }
}

fn init_params(config: &WaveNetConfig, seed: u64) -> Result<ParamStore, AutogradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let (r, s, c) = (config.residual_channels, config.skip_channels, config.cond_channels);
    p.add_normal("embed", config.out_classes, r, 0.1, &mut rng)?;
    let mut c_in = N_MELS;
    for (i, &(window, stride)) in UPSAMPLE_STAGES.iter().enumerate() {
        let fan_in = c_in * window / stride;
        p.add_uniform(format!("up{i}.w"), window * c, c_in, fan_in, &mut rng)?;
        p.add_zeros(format!("up{i}.b"), c, 1)?;
        c_in = c;
    }
    let last = config.layers() - 1;
    for l in 0..config.layers() {
        p.add_uniform(format!("layer{l}.conv.w"), 4 * r, r, 2 * r, &mut rng)?;
        p.add_zeros(format!("layer{l}.conv.b"), 2 * r, 1)?;
        p.add_uniform(format!("layer{l}.cond.w"), 2 * r, c, c, &mut rng)?;
        p.add_uniform(format!("layer{l}.skip.w"), s, r, r, &mut rng)?;
        p.add_zeros(format!("layer{l}.skip.b"), s, 1)?;
        if l != last {
            p.add_uniform(format!("layer{l}.res.w"), r, r, r, &mut rng)?;
            p.add_zeros(format!("layer{l}.res.b"), r, 1)?;
        }
    }
    p.add_uniform("post1.w", s, s, s, &mut rng)?;
    p.add_zeros("post1.b", s, 1)?;
    // Zero output layer: the untrained model predicts a uniform distribution.
    p.add_zeros("post2.w", config.out_classes, s)?;
    p.add_zeros("post2.b", config.out_classes, 1)?;
    Ok(p)
}

fn resolve_ids(config: &WaveNetConfig, p: &ParamStore) -> Result<Ids, AutogradError> {
    let pair = |w: &str, b: &str| -> Result<(ParamId, ParamId), AutogradError> { Ok((p.id(w)?, p.id(b)?)) };
    let last = config.layers() - 1;
    let mut layers = Vec::with_capacity(config.layers());
    for l in 0..config.layers() {
        layers.push(LayerIds {
            conv_w: p.id(&format!("layer{l}.conv.w"))?,
            conv_b: p.id(&format!("layer{l}.conv.b"))?,
            cond_w: p.id(&format!("layer{l}.cond.w"))?,
            skip_w: p.id(&format!("layer{l}.skip.w"))?,
            skip_b: p.id(&format!("layer{l}.skip.b"))?,
            res: if l == last {
                None
            } else {
                Some(pair(&format!("layer{l}.res.w"), &format!("layer{l}.res.b"))?)
            },
        });
    }
    Ok(Ids {
        embed: p.id("embed")?,
        up: (0..UPSAMPLE_STAGES.len())
            .map(|i| pair(&format!("up{i}.w"), &format!("up{i}.b")))
            .collect::<Result<_, _>>()?,
        layers,
        post1: pair("post1.w", "post1.b")?,
        post2: pair("post2.w", "post2.b")?,
    })
}

/// Maps a parameter to the graph node holding its value.
pub type Lookup<'a> = &'a dyn Fn(ParamId) -> Var;

/// Input ids for a batch: each sequence delayed by one sample behind the
/// silence code.
pub fn shifted_inputs(sequences: &[&[u8]]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(sequences.iter().map(|s| s.len()).sum());
    for seq in sequences {
        if seq.is_empty() {
            continue;
        }
        ids.push(usize::from(MULAW_SILENCE));
        ids.extend(seq[..seq.len() - 1].iter().map(|&c| usize::from(c)));
    }
    ids
}

impl WaveNet {
    pub fn new(config: WaveNetConfig, seed: u64) -> Result<Self, WaveNetError> {
        config.validate()?;
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: WaveNetConfig, params: ParamStore) -> Result<Self, WaveNetError> {
        config.validate()?;
        let reference = init_params(&config, 0)?;
        if reference.len() != params.len() {
            return Err(WaveNetError::Config(format!(
                "{} parameters, expected {}",
                params.len(),
                reference.len()
            )));
        }
        for (_, want) in reference.iter() {
            let got = params.get(params.id(&want.name)?);
            if (got.value.rows(), got.value.cols()) != (want.value.rows(), want.value.cols()) {
                return Err(WaveNetError::Config(format!(
                    "parameter {} is {}x{}, expected {}x{}",
                    want.name,
                    got.value.rows(),
                    got.value.cols(),
                    want.value.rows(),
                    want.value.cols()
                )));
            }
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    fn param_vars(&self, g: &mut Graph) -> Vec<Var> {
        self.params.ids().map(|id| g.param(&self.params, id)).collect()
    }

    /// `80 x B*T` compressed Mel frames to `C_cond x B*T*128` conditioning.
    pub fn upsample_graph(&self, g: &mut Graph, p: Lookup, mel: Var, frames: usize) -> Result<Var, WaveNetError> {
        let rows = g.value(mel).rows();
        if rows != N_MELS {
            return Err(WaveNetError::MelRows { got: rows });
        }
        let mut x = mel;
        let mut seq = frames;
        for (&(window, stride), &(w, b)) in UPSAMPLE_STAGES.iter().zip(&self.ids.up) {
            x = g.transposed_conv(x, p(w), p(b), stride, window, seq)?;
            seq *= stride;
        }
        Ok(x)
    }

    /// Logits `256 x B*L` for shifted input ids and per-sample conditioning
    /// `C_cond x B*L`.
    pub fn logits_graph(&self, g: &mut Graph, p: Lookup, inputs: &[usize], cond: Var, seq_len: usize) -> Result<Var, WaveNetError> {
        let cond_cols = g.value(cond).cols();
        if cond_cols != inputs.len() {
            return Err(WaveNetError::LengthMismatch {
                codes: inputs.len(),
                cond: cond_cols,
            });
        }
        let mut x = g.gather(p(self.ids.embed), inputs)?;
        let mut skip: Option<Var> = None;
        for (layer, &dilation) in self.ids.layers.iter().zip(&self.config.dilations) {
            let a = g.dilated_conv(x, p(layer.conv_w), dilation, seq_len)?;
            let c = g.matmul(p(layer.cond_w), cond)?;
            let a = g.add(a, c)?;
            let a = g.add_bias(a, p(layer.conv_b))?;
            let z = g.gated(a)?;
            let s = g.linear(p(layer.skip_w), z, p(layer.skip_b))?;
            skip = Some(match skip {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
            if let Some((rw, rb)) = layer.res {
                let r = g.linear(p(rw), z, p(rb))?;
                x = g.add(x, r)?;
            }
        }
        let h = g.relu(skip.expect("at least one layer"));
        let h = g.linear(p(self.ids.post1.0), h, p(self.ids.post1.1))?;
        let h = g.relu(h);
        Ok(g.linear(p(self.ids.post2.0), h, p(self.ids.post2.1))?)
    }

    /// Teacher-forced mean cross-entropy for a batch of code sequences (each
    /// a multiple of 128 long) and their `80 x B*T` compressed Mel frames.
    pub fn loss_graph(&self, g: &mut Graph, codes: &[&[u8]], mel: &Matrix) -> Result<Var, WaveNetError> {
        self.loss_graph_from(g, codes, mel, &vec![0; codes.len()])
    }

    /// [`Self::loss_graph`] scoring sequence `b` only from position
    /// `scored_from[b]` on; earlier samples serve as history.
    pub fn loss_graph_from(&self, g: &mut Graph, codes: &[&[u8]], mel: &Matrix, scored_from: &[usize]) -> Result<Var, WaveNetError> {
        let seq_len = codes.first().map_or(0, |c| c.len());
        if seq_len == 0 || seq_len % HOP != 0 || codes.iter().any(|c| c.len() != seq_len) {
            return Err(WaveNetError::BadSequenceLength(seq_len));
        }
        let frames = seq_len / HOP;
        if mel.cols() != frames * codes.len() {
            return Err(WaveNetError::LengthMismatch {
                codes: seq_len * codes.len(),
                cond: mel.cols() * HOP,
            });
        }
        let vars = self.param_vars(g);
        let p = |id: ParamId| vars[id.index()];
        let mel_var = g.leaf(mel.clone());
        let cond = self.upsample_graph(g, &p, mel_var, frames)?;
        let inputs = shifted_inputs(codes);
        let logits = self.logits_graph(g, &p, &inputs, cond, seq_len)?;
        if scored_from.len() != codes.len() || scored_from.iter().any(|&f| f >= seq_len) {
            return Err(WaveNetError::BadSequenceLength(seq_len));
        }
        let targets: Vec<usize> = codes
            .iter()
            .zip(scored_from)
            .flat_map(|(c, &from)| {
                c.iter()
                    .enumerate()
                    .map(move |(t, &v)| if t < from { IGNORE_TARGET } else { usize::from(v) })
            })
            .collect();
        Ok(g.cross_entropy(logits, &targets)?)
    }

    /// Teacher-forced logits for one sequence of codes under explicit
    /// per-sample conditioning.
    pub fn logits(&self, codes: &[u8], cond: &Matrix) -> Result<Matrix, WaveNetError> {
        let mut g = Graph::new();
        let vars = self.param_vars(&mut g);
        let p = |id: ParamId| vars[id.index()];
        let c = g.leaf(cond.clone());
        let y = self.logits_graph(&mut g, &p, &shifted_inputs(&[codes]), c, codes.len())?;
        Ok(g.value(y).clone())
    }

    /// Upsampled conditioning for one compressed Mel spectrogram.
    pub fn upsample(&self, mel: &Matrix) -> Result<Matrix, WaveNetError> {
        let mut g = Graph::new();
        let vars = self.param_vars(&mut g);
        let p = |id: ParamId| vars[id.index()];
        let m = g.leaf(mel.clone());
        let y = self.upsample_graph(&mut g, &p, m, mel.cols())?;
        Ok(g.value(y).clone())
    }

    pub fn inference(&self) -> InferenceWeights {
        InferenceWeights::from_model(self)
    }

    pub fn hyperparameters(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        let dilations: Vec<String> = c.dilations.iter().map(ToString::to_string).collect();
        BTreeMap::from([
            ("kind".to_string(), "wavenet".to_string()),
            ("dilations".to_string(), dilations.join(",")),
            ("residual_channels".to_string(), c.residual_channels.to_string()),
            ("skip_channels".to_string(), c.skip_channels.to_string()),
            ("out_classes".to_string(), c.out_classes.to_string()),
            ("cond_channels".to_string(), c.cond_channels.to_string()),
        ])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.hyper = self.hyperparameters();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, WaveNetError> {
        let kind = ck.hyper_str("kind")?;
        if kind != "wavenet" {
            return Err(WaveNetError::WrongKind(kind.to_string()));
        }
        let dilations = ck
            .hyper_str("dilations")?
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| WaveNetError::Config("bad dilation list".into()))?;
        let config = WaveNetConfig {
            dilations,
            residual_channels: ck.hyper_parse("residual_channels")?,
            skip_channels: ck.hyper_parse("skip_channels")?,
            out_classes: ck.hyper_parse("out_classes")?,
            cond_channels: ck.hyper_parse("cond_channels")?,
        };
        Self::from_params(config, ck.params.clone())
    }
}
