//! CQT correlation degradation curves, embedding-space maps and morphing paths.

mod curves;
mod grid;
mod plot;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::dsp::DspError;
use crate::mel2mel::ModelError;
use crate::wavenet::WaveNetError;

pub use curves::{
    bin_correlations, degradation_curves, per_instrument_breakdown, CorrelationCurve, DegradationStage, EvalModels,
    EvalTrack, OCTAVES,
};
pub use grid::{embedding_grid, morph_path, probe_input, EmbeddingGrid, GridBounds, GridPoint, MorphStep, GRID_MARGIN};
pub use plot::{heatmap_png, line_plot_png, write_png, Rgb, Raster};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("stage {stage} needs a trained {what} checkpoint")]
    MissingModel { stage: String, what: &'static str },
    #[error("embedding grid needs a 2-D embedding, got {dim}-D; project higher-dimensional embeddings first")]
    EmbeddingDim { dim: usize },
    #[error("grid resolution must be at least 1")]
    Resolution,
    #[error("a morph path needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("no evaluation tracks")]
    NoTracks,
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    WaveNet(#[from] WaveNetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}
