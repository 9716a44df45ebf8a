//! The note-to-Mel network: a learned instrument embedding modulates a
//! 1x1-conv / biLSTM / 1x1-conv stack through two FiLM layers.
//!
//! Output columns live in the `tanh(ln(S) / 4)` domain, so the same network
//! serves all three [`LossKind`]s.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Checkpoint, CheckpointError, Graph, ParamId, ParamStore, Unary, Var};
use crate::dsp::{tanh_log_compress, MelSpectrogram, N_MELS};
use crate::matrix::Matrix;
use crate::midi::{INPUT_ROWS, N_KEYS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown loss kind `{0}`")]
    UnknownLoss(String),
    #[error("instrument {id} out of range for {count} instruments")]
    InstrumentOutOfRange { id: usize, count: usize },
    #[error("embedding has {got} dimensions, model expects {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("input has {got} rows, expected {expected}")]
    InputRows { expected: usize, got: usize },
    #[error("target shape {got:?} does not match prediction {expected:?}")]
    TargetShape { expected: (usize, usize), got: (usize, usize) },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("checkpoint holds a `{0}` model")]
    WrongKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Proposed,
    FrameOnly,
    OnsetOnly,
    Film1Only,
    Film2Only,
    FwdLstmOnly,
    Relu,
    Conv3,
    Conv5,
    Lstm2,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Proposed,
        Variant::FrameOnly,
        Variant::OnsetOnly,
        Variant::Film1Only,
        Variant::Film2Only,
        Variant::FwdLstmOnly,
        Variant::Relu,
        Variant::Conv3,
        Variant::Conv5,
        Variant::Lstm2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::FrameOnly => "frame_only",
            Variant::OnsetOnly => "onset_only",
            Variant::Film1Only => "film1_only",
            Variant::Film2Only => "film2_only",
            Variant::FwdLstmOnly => "fwd_lstm_only",
            Variant::Relu => "relu",
            Variant::Conv3 => "conv3",
            Variant::Conv5 => "conv5",
            Variant::Lstm2 => "lstm2",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Proposed => "Proposed",
            Variant::FrameOnly => "Frame input only",
            Variant::OnsetOnly => "Onset input only",
            Variant::Film1Only => "First FiLM only",
            Variant::Film2Only => "Second FiLM only",
            Variant::FwdLstmOnly => "Forward LSTM only",
            Variant::Relu => "ReLU activation",
            Variant::Conv3 => "3x1 convolutions",
            Variant::Conv5 => "5x1 convolutions",
            Variant::Lstm2 => "2-layer LSTM",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRows {
    Both,
    FrameOnly,
    OnsetOnly,
}

impl InputRows {
    pub fn count(self) -> usize {
        match self {
            InputRows::Both => INPUT_ROWS,
            InputRows::FrameOnly | InputRows::OnsetOnly => N_KEYS,
        }
    }

    /// Selects rows from the 176-row `[onset; frame]` input.
    pub fn select(self, input: &Matrix) -> Matrix {
        match self {
            InputRows::Both => input.clone(),
            InputRows::OnsetOnly => input.slice_rows(0, N_KEYS),
            InputRows::FrameOnly => input.slice_rows(N_KEYS, N_KEYS),
        }
    }
}

/// Structural description of one network variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: InputRows,
    pub film1: bool,
    pub film2: bool,
    pub bidirectional: bool,
    pub lstm_layers: usize,
    /// ReLU after the input convolution.
    pub relu: bool,
    /// Time width of both convolutions (1, 3 or 5, same padding).
    pub kernel: usize,
}

pub fn ablation_config(variant: Variant) -> Architecture {
    let base = Architecture {
        input: InputRows::Both,
        film1: true,
        film2: true,
        bidirectional: true,
        lstm_layers: 1,
        relu: false,
        kernel: 1,
    };
    match variant {
        Variant::Proposed => base,
        Variant::FrameOnly => Architecture {
            input: InputRows::FrameOnly,
            ..base
        },
        Variant::OnsetOnly => Architecture {
            input: InputRows::OnsetOnly,
            ..base
        },
        Variant::Film1Only => Architecture { film2: false, ..base },
        Variant::Film2Only => Architecture { film1: false, ..base },
        Variant::FwdLstmOnly => Architecture {
            bidirectional: false,
            ..base
        },
        Variant::Relu => Architecture { relu: true, ..base },
        Variant::Conv3 => Architecture { kernel: 3, ..base },
        Variant::Conv5 => Architecture { kernel: 5, ..base },
        Variant::Lstm2 => Architecture { lstm_layers: 2, ..base },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    AbsMse,
    LogAbsMse,
    TanhLogAbsMse,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::AbsMse, LossKind::LogAbsMse, LossKind::TanhLogAbsMse];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::AbsMse => "abs_mse",
            LossKind::LogAbsMse => "log_abs_mse",
            LossKind::TanhLogAbsMse => "tanh_log_abs_mse",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::UnknownLoss(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mel2MelConfig {
    pub n_instruments: usize,
    pub embed_dim: usize,
    /// Width of the convolution and first FiLM layer.
    pub hidden: usize,
    /// LSTM units per direction. Bidirectional output width is twice this.
    pub lstm_units: usize,
    pub variant: Variant,
}

impl Mel2MelConfig {
    /// 256 hidden channels, 128 LSTM units per direction.
    pub fn full(n_instruments: usize, embed_dim: usize) -> Self {
        Self {
            n_instruments,
            embed_dim,
            hidden: 256,
            lstm_units: 128,
            variant: Variant::Proposed,
        }
    }

    pub fn architecture(&self) -> Architecture {
        ablation_config(self.variant)
    }

    /// Rows leaving the recurrent stack. A single forward LSTM is given both
    /// directions' units so every variant keeps the same width after the LSTM.
    pub fn lstm_output(&self) -> usize {
        2 * self.lstm_units
    }

    fn direction_units(&self) -> usize {
        if self.architecture().bidirectional {
            self.lstm_units
        } else {
            2 * self.lstm_units
        }
    }
}

/// Maps a parameter to the graph node holding its value.
pub type Lookup<'a> = &'a dyn Fn(ParamId) -> Var;

struct FilmIds {
    f_w: ParamId,
    f_b: ParamId,
    h_w: ParamId,
    h_b: ParamId,
}

struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

struct Ids {
    embedding: ParamId,
    conv_in_w: ParamId,
    conv_in_b: ParamId,
    film1: Option<FilmIds>,
    lstm: Vec<(LstmIds, Option<LstmIds>)>,
    film2: Option<FilmIds>,
    conv_out_w: ParamId,
    conv_out_b: ParamId,
}

pub struct Mel2Mel {
    pub config: Mel2MelConfig,
    pub params: ParamStore,
    ids: Ids,
}

impl Clone for Mel2Mel {
    fn clone(&self) -> Self {
        Self::from_params(self.config.clone(), self.params.clone()).expect("parameters already validated")
    }
}

impl fmt::Debug for Mel2Mel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mel2Mel")
            .field("config", &self.config)
            .field("scalars", &self.params.scalar_count())
            .finish()
    }
}

fn init_params(config: &Mel2MelConfig, seed: u64) -> Result<ParamStore, AutogradError> {
    let arch = config.architecture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let (d, h) = (config.embed_dim, config.hidden);
    p.add_normal("embedding", config.n_instruments, d, 0.1, &mut rng)?;
    let in_width = arch.input.count() * arch.kernel;
    p.add_uniform("conv_in.w", h, in_width, in_width, &mut rng)?;
    p.add_zeros("conv_in.b", h, 1)?;
    let film = |p: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng| -> Result<(), AutogradError> {
        p.add_uniform(format!("{prefix}.f.w"), width, d, d, rng)?;
        p.add_zeros(format!("{prefix}.f.b"), width, 1)?;
        p.add_uniform(format!("{prefix}.h.w"), width, d, d, rng)?;
        p.add_zeros(format!("{prefix}.h.b"), width, 1)?;
        Ok(())
    };
    if arch.film1 {
        film(&mut p, "film1", h, &mut rng)?;
    }
    let units = config.direction_units();
    let mut input = h;
    for layer in 0..arch.lstm_layers {
        let dirs: &[&str] = if arch.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
        for dir in dirs {
            let prefix = format!("lstm{layer}.{dir}");
            p.add_uniform(format!("{prefix}.w_ih"), 4 * units, input, input, &mut rng)?;
            p.add_uniform(format!("{prefix}.w_hh"), 4 * units, units, units, &mut rng)?;
            // Forget-gate bias starts at one.
            let mut bias = Matrix::zeros(4 * units, 1);
            for r in units..2 * units {
                bias.set(r, 0, 1.0);
            }
            p.add(format!("{prefix}.bias"), bias)?;
        }
        input = config.lstm_output();
    }
    if arch.film2 {
        film(&mut p, "film2", config.lstm_output(), &mut rng)?;
    }
    let out_width = config.lstm_output() * arch.kernel;
    p.add_uniform("conv_out.w", N_MELS, out_width, out_width, &mut rng)?;
    p.add_zeros("conv_out.b", N_MELS, 1)?;
    Ok(p)
}

fn shape_mismatch(name: &str, detail: String) -> AutogradError {
    AutogradError::Shape {
        op: "mel2mel parameters",
        detail: format!("{name}: {detail}"),
    }
}

impl Mel2Mel {
    pub fn new(config: Mel2MelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking names and shapes against a
    /// freshly initialized model of the same configuration.
    pub fn from_params(config: Mel2MelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let reference = init_params(&config, 0)?;
        if reference.len() != params.len() {
            return Err(shape_mismatch("count", format!("{} parameters, expected {}", params.len(), reference.len())).into());
        }
        for (_, want) in reference.iter() {
            let got = params.get(params.id(&want.name)?);
            if (got.value.rows(), got.value.cols()) != (want.value.rows(), want.value.cols()) {
                return Err(shape_mismatch(
                    &want.name,
                    format!(
                        "{}x{}, expected {}x{}",
                        got.value.rows(),
                        got.value.cols(),
                        want.value.rows(),
                        want.value.cols()
                    ),
                )
                .into());
            }
        }
        let arch = config.architecture();
        let film = |prefix: &str| -> Result<FilmIds, AutogradError> {
            Ok(FilmIds {
                f_w: params.id(&format!("{prefix}.f.w"))?,
                f_b: params.id(&format!("{prefix}.f.b"))?,
                h_w: params.id(&format!("{prefix}.h.w"))?,
                h_b: params.id(&format!("{prefix}.h.b"))?,
            })
        };
        let lstm = |prefix: String| -> Result<LstmIds, AutogradError> {
            Ok(LstmIds {
                w_ih: params.id(&format!("{prefix}.w_ih"))?,
                w_hh: params.id(&format!("{prefix}.w_hh"))?,
                bias: params.id(&format!("{prefix}.bias"))?,
            })
        };
        let mut layers = Vec::new();
        for layer in 0..arch.lstm_layers {
            let fwd = lstm(format!("lstm{layer}.fwd"))?;
            let bwd = if arch.bidirectional {
                Some(lstm(format!("lstm{layer}.bwd"))?)
            } else {
                None
            };
            layers.push((fwd, bwd));
        }
        let ids = Ids {
            embedding: params.id("embedding")?,
            conv_in_w: params.id("conv_in.w")?,
            conv_in_b: params.id("conv_in.b")?,
            film1: if arch.film1 { Some(film("film1")?) } else { None },
            lstm: layers,
            film2: if arch.film2 { Some(film("film2")?) } else { None },
            conv_out_w: params.id("conv_out.w")?,
            conv_out_b: params.id("conv_out.b")?,
        };
        Ok(Self { config, params, ids })
    }

    pub fn embedding_table(&self) -> &Matrix {
        &self.params.get(self.ids.embedding).value
    }

    /// Learned coordinates of one instrument.
    pub fn embedding(&self, id: usize) -> Result<Vec<f64>, ModelError> {
        let table = self.embedding_table();
        if id >= table.rows() {
            return Err(ModelError::InstrumentOutOfRange { id, count: table.rows() });
        }
        Ok(table.row(id).to_vec())
    }

    /// `D x B` embedding columns for `ids`, differentiable into the table.
    pub fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Var, ModelError> {
        let count = self.config.n_instruments;
        if let Some(&id) = ids.iter().find(|&&id| id >= count) {
            return Err(ModelError::InstrumentOutOfRange { id, count });
        }
        let table = g.param(&self.params, self.ids.embedding);
        Ok(g.gather(table, ids)?)
    }

    /// Leaf node holding arbitrary embedding columns (any point in `R^D`).
    pub fn embedding_leaf(&self, g: &mut Graph, points: &[Vec<f64>]) -> Result<Var, ModelError> {
        let d = self.config.embed_dim;
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(ModelError::EmbeddingDim { expected: d, got: p.len() });
        }
        Ok(g.leaf(Matrix::from_fn(d, points.len(), |r, c| points[c][r])))
    }

    /// Same-padded time convolution via shifted copies stacked on rows.
    fn conv(&self, g: &mut Graph, p: Lookup, x: Var, w: ParamId, b: ParamId, seq_len: usize) -> Result<Var, AutogradError> {
        let k = self.config.architecture().kernel;
        let input = if k == 1 {
            x
        } else {
            let half = (k / 2) as isize;
            let mut taps = Vec::with_capacity(k);
            for offset in (-half..=half).rev() {
                taps.push(if offset == 0 { x } else { g.shift(x, offset, seq_len)? });
            }
            g.concat_rows(&taps)?
        };
        g.linear(p(w), input, p(b))
    }

    fn film(&self, g: &mut Graph, p: Lookup, x: Var, ids: &FilmIds, embed: Var, seq_len: usize) -> Result<Var, AutogradError> {
        let f = g.linear(p(ids.f_w), embed, p(ids.f_b))?;
        let gamma = g.add_scalar(f, 1.0);
        let beta = g.linear(p(ids.h_w), embed, p(ids.h_b))?;
        g.film(x, gamma, beta, seq_len)
    }

    /// Builds the forward pass. `input` is the variant's selected rows for a
    /// batch of `B` sequences (`rows x B * seq_len`); `embed` is `D x B`.
    /// Returns `80 x B * seq_len` in the compressed domain.
    pub fn forward_graph(&self, g: &mut Graph, input: Var, embed: Var, seq_len: usize) -> Result<Var, ModelError> {
        let vars: Vec<Var> = self.params.ids().map(|id| g.param(&self.params, id)).collect();
        self.forward_graph_with(g, input, embed, seq_len, &|id: ParamId| vars[id.index()])
    }

    /// [`Self::forward_graph`] with parameters supplied as existing graph
    /// nodes, indexed by [`ParamId`].
    pub fn forward_graph_with(&self, g: &mut Graph, input: Var, embed: Var, seq_len: usize, p: Lookup) -> Result<Var, ModelError> {
        let arch = self.config.architecture();
        let rows = g.value(input).rows();
        if rows != arch.input.count() {
            return Err(ModelError::InputRows {
                expected: arch.input.count(),
                got: rows,
            });
        }
        let d = g.value(embed).rows();
        if d != self.config.embed_dim {
            return Err(ModelError::EmbeddingDim {
                expected: self.config.embed_dim,
                got: d,
            });
        }
        let mut x = self.conv(g, p, input, self.ids.conv_in_w, self.ids.conv_in_b, seq_len)?;
        if arch.relu {
            x = g.relu(x);
        }
        if let Some(ids) = &self.ids.film1 {
            x = self.film(g, p, x, ids, embed, seq_len)?;
        }
        for (fwd, bwd) in &self.ids.lstm {
            let run = |g: &mut Graph, ids: &LstmIds, reverse: bool| -> Result<Var, AutogradError> {
                g.lstm(x, p(ids.w_ih), p(ids.w_hh), p(ids.bias), seq_len, reverse)
            };
            let f = run(g, fwd, false)?;
            x = match bwd {
                Some(ids) => {
                    let b = run(g, ids, true)?;
                    g.concat_rows(&[f, b])?
                }
                None => f,
            };
        }
        if let Some(ids) = &self.ids.film2 {
            x = self.film(g, p, x, ids, embed, seq_len)?;
        }
        Ok(self.conv(g, p, x, self.ids.conv_out_w, self.ids.conv_out_b, seq_len)?)
    }

    /// Predicts `80 x T` compressed Mel frames for a `176 x T` input at
    /// arbitrary embedding points, one output per point.
    pub fn predict_batch(&self, input: &Matrix, points: &[Vec<f64>]) -> Result<Vec<Matrix>, ModelError> {
        if input.rows() != INPUT_ROWS {
            return Err(ModelError::InputRows {
                expected: INPUT_ROWS,
                got: input.rows(),
            });
        }
        let t = input.cols();
        if points.is_empty() || t == 0 {
            return Ok(points.iter().map(|_| Matrix::zeros(N_MELS, t)).collect());
        }
        let selected = self.config.architecture().input.select(input);
        let tiled = Matrix::hstack(&vec![&selected; points.len()]);
        let mut g = Graph::new();
        let x = g.leaf(tiled);
        let e = self.embedding_leaf(&mut g, points)?;
        let y = self.forward_graph(&mut g, x, e, t)?;
        let out = g.value(y);
        Ok((0..points.len()).map(|b| out.slice_cols(b * t, t)).collect())
    }

    pub fn predict(&self, input: &Matrix, point: &[f64]) -> Result<Matrix, ModelError> {
        Ok(self.predict_batch(input, &[point.to_vec()])?.remove(0))
    }

    pub fn predict_instrument(&self, input: &Matrix, id: usize) -> Result<Matrix, ModelError> {
        self.predict(input, &self.embedding(id)?)
    }

    /// Metadata recorded alongside the parameters.
    pub fn hyperparameters(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        BTreeMap::from([
            ("kind".to_string(), "mel2mel".to_string()),
            ("n_instruments".to_string(), c.n_instruments.to_string()),
            ("embed_dim".to_string(), c.embed_dim.to_string()),
            ("hidden".to_string(), c.hidden.to_string()),
            ("lstm_units".to_string(), c.lstm_units.to_string()),
            ("variant".to_string(), c.variant.to_string()),
        ])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.hyper = self.hyperparameters();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let kind = ck.hyper_str("kind")?;
        if kind != "mel2mel" {
            return Err(ModelError::WrongKind(kind.to_string()));
        }
        let config = Mel2MelConfig {
            n_instruments: ck.hyper_parse("n_instruments")?,
            embed_dim: ck.hyper_parse("embed_dim")?,
            hidden: ck.hyper_parse("hidden")?,
            lstm_units: ck.hyper_parse("lstm_units")?,
            variant: ck.hyper_str("variant")?.parse()?,
        };
        Self::from_params(config, ck.params.clone())
    }
}

/// Adds the training loss between compressed predictions `pred` and linear
/// targets to the graph.
pub fn loss_graph(g: &mut Graph, pred: Var, target: &MelSpectrogram, kind: LossKind) -> Result<Var, ModelError> {
    let p = g.value(pred);
    let t = &target.values;
    if (p.rows(), p.cols()) != (t.rows(), t.cols()) {
        return Err(ModelError::TargetShape {
            expected: (p.rows(), p.cols()),
            got: (t.rows(), t.cols()),
        });
    }
    let (target_leaf, estimate) = match kind {
        LossKind::TanhLogAbsMse => (g.leaf(tanh_log_compress(target)), pred),
        LossKind::LogAbsMse => (g.leaf(t.map(f64::ln)), g.unary(pred, Unary::Atanh4)),
        LossKind::AbsMse => {
            let log = g.unary(pred, Unary::Atanh4);
            (g.leaf(t.clone()), g.unary(log, Unary::Exp))
        }
    };
    let diff = g.sub(target_leaf, estimate)?;
    let sq = g.unary(diff, Unary::Square);
    Ok(g.mean_all(sq))
}

/// Loss value without gradients.
pub fn loss(pred: &Matrix, target: &MelSpectrogram, kind: LossKind) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let p = g.leaf(pred.clone());
    let l = loss_graph(&mut g, p, target, kind)?;
    let v = g.scalar(l);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFiniteLoss)
    }
}
