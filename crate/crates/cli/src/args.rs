//! Command-line grammar.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use melsynth::synth::Vocoder;
use melsynth::train::ScalePreset;

/// Environment variable naming the default checkpoint directory.
pub const CHECKPOINT_ENV: &str = "MELSYNTH_CHECKPOINTS";

#[derive(Debug, Parser)]
#[command(name = "melsynth", version, about = "Timbre-conditioned MIDI-to-audio synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the parametric training corpus.
    Dataset(DatasetArgs),
    /// Train the Mel prediction network.
    TrainMel2mel(TrainArgs),
    /// Train the WaveNet vocoder on ground-truth Mel conditioning.
    TrainWavenet(TrainArgs),
    /// Train every architecture variant over several seeds.
    Ablate(AblateArgs),
    /// Correlation curves, embedding maps and morphs.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Synthesize audio from MIDI at a point in timbre space.
    Synth(SynthArgs),
    /// Serve synthesis over HTTP.
    Serve(ServeArgs),
    /// Time the cached and naive WaveNet samplers.
    BenchSampler(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Full,
    Desk,
}

impl From<PresetArg> for ScalePreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Full => ScalePreset::Full,
            PresetArg::Desk => ScalePreset::Desk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VocoderArg {
    Preview,
    Wavenet,
}

impl From<VocoderArg> for Vocoder {
    fn from(v: VocoderArg) -> Self {
        match v {
            VocoderArg::Preview => Vocoder::Preview,
            VocoderArg::Wavenet => Vocoder::Wavenet,
        }
    }
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// TOML overrides for the corpus configuration.
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML overrides applied on top of the preset.
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus directory holding `manifest.txt`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the checkpoint already in `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    /// First seed; runs use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Comma-separated variant names; all ten by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    /// Directory with `mel2mel.ckpt`, `wavenet.ckpt` and `instruments.txt`.
    #[arg(long, env = CHECKPOINT_ENV)]
    pub checkpoints: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Per-octave CQT correlation of each reconstruction stage.
    Degradation(DegradationArgs),
    /// Spectral centroid and energy maps over the embedding plane.
    Grid(GridArgs),
    /// Mel predictions along a line between two instruments.
    Morph(MorphArgs),
}

#[derive(Debug, Args)]
pub struct DegradationArgs {
    #[command(flatten)]
    pub checkpoints: CheckpointArgs,
    /// Extra Mel2Mel checkpoints as `loss=PATH`, one per loss kind.
    #[arg(long = "mel2mel")]
    pub mel2mel: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation tracks per instrument.
    #[arg(long, default_value_t = 2)]
    pub tracks: usize,
    /// Excerpt length in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub checkpoints: CheckpointArgs,
    #[arg(long, default_value_t = 320)]
    pub resolution: usize,
    /// Output directory; the checkpoint directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MorphArgs {
    #[command(flatten)]
    pub checkpoints: CheckpointArgs,
    #[arg(long)]
    pub from: usize,
    #[arg(long)]
    pub to: usize,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    /// MIDI file to render; the middle-C probe by default.
    #[arg(long)]
    pub midi: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("timbre").required(true).args(["instrument", "embedding", "morph"])))]
pub struct SynthArgs {
    #[command(flatten)]
    pub checkpoints: CheckpointArgs,
    /// MIDI file to render; the middle-C probe by default.
    #[arg(long)]
    pub midi: Option<PathBuf>,
    #[arg(long)]
    pub instrument: Option<usize>,
    /// Comma-separated embedding coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub embedding: Option<Vec<f64>>,
    /// `FROM:TO:STEPS` between two instruments.
    #[arg(long)]
    pub morph: Option<String>,
    #[arg(long, value_enum, default_value = "preview")]
    pub vocoder: VocoderArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output WAV path; the Mel image and dump are written alongside.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub checkpoints: CheckpointArgs,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory of static UI files served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Concurrent WaveNet sampling streams.
    #[arg(long, default_value_t = 1)]
    pub wavenet_streams: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub preset: PresetArg,
    /// Samples generated by the cached engine.
    #[arg(long, default_value_t = 16_000)]
    pub samples: usize,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
