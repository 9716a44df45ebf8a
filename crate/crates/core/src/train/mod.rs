//! Training runs, checkpoints, loss reports and the ablation matrix.

mod ablation;
mod config;
mod report;
mod trainer;

use std::io;
use std::ops::ControlFlow;
use std::path::PathBuf;

use thiserror::Error;

use crate::autograd::{AutogradError, CheckpointError};
use crate::data::{Corpus, DataError, Example};
use crate::mel2mel::{Mel2Mel, ModelError};
use crate::wavenet::{WaveNet, WaveNetError};

pub use ablation::{run_ablation_suite, trend_threshold, AblationRow, AblationTable, TrendCheck, EXPECTED_TRENDS};
pub use config::{ScalePreset, TrainConfig, TrainTarget};
pub use report::{final_window, CheckpointRecord, RunReport, Summary};
pub use trainer::{Objective, Progress, Trainer, VALIDATION_SEED};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    WaveNet(#[from] WaveNetError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no training render holds {sequence_length} samples")]
    NoTrainingData { sequence_length: usize },
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: u64, loss: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Aligned roll, Mel target and codes for `length` samples of render `index`
/// starting at sample `offset`.
pub fn make_example(corpus: &Corpus, index: usize, offset: usize, length: usize) -> Result<Example, TrainError> {
    Ok(corpus.example(index, offset, length)?)
}

/// Trains Mel2Mel to completion; the latest checkpoint goes to
/// `checkpoint_path` at every validation point.
pub fn train_mel2mel(
    config: TrainConfig,
    corpus: &Corpus,
    checkpoint_path: Option<PathBuf>,
    observer: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<(RunReport, Mel2Mel), TrainError> {
    run_to_end::<Mel2Mel>(config, corpus, checkpoint_path, "mel2mel", observer)
}

/// Teacher-forced WaveNet training on ground-truth Mel conditioning.
pub fn train_wavenet(
    config: TrainConfig,
    corpus: &Corpus,
    checkpoint_path: Option<PathBuf>,
    observer: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<(RunReport, WaveNet), TrainError> {
    run_to_end::<WaveNet>(config, corpus, checkpoint_path, "wavenet", observer)
}

fn run_to_end<M: Objective>(
    config: TrainConfig,
    corpus: &Corpus,
    checkpoint_path: Option<PathBuf>,
    label: &str,
    observer: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<(RunReport, M), TrainError> {
    let mut trainer = Trainer::<M>::new(config, corpus)?;
    if let Some(path) = checkpoint_path {
        trainer = trainer.with_checkpoint_path(path);
    }
    let report = trainer.run(label, observer)?;
    Ok((report, trainer.model))
}
