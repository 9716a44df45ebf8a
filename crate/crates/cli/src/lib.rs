//! Command-line tools and the HTTP synthesis service.

pub mod args;
pub mod commands;
pub mod service;

use std::path::Path;

use anyhow::Result;
use tokio::sync::Semaphore;

use args::{Cli, Command, EvalCommand, ServeArgs};
use melsynth::synth::Synthesizer;
use service::{AppState, GridMaps};

/// Loads the checkpoint directory into a service state.
pub fn load_state(dir: &Path, wavenet_streams: usize) -> Result<AppState> {
    Ok(AppState {
        synth: Synthesizer::load_dir(dir)?,
        grid: GridMaps::load(dir)?,
        wavenet_streams: Semaphore::new(wavenet_streams.max(1)),
        checkpoint_dir: Some(dir.to_path_buf()),
    })
}

fn serve(args: &ServeArgs) -> Result<()> {
    let state = load_state(&args.checkpoints.checkpoints, args.wavenet_streams)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(state, &args.host, args.port, args.static_dir.as_deref()))
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset(a) => commands::dataset(a),
        Command::TrainMel2mel(a) => commands::train_mel2mel(a),
        Command::TrainWavenet(a) => commands::train_wavenet(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Eval(EvalCommand::Degradation(a)) => commands::eval_degradation(a),
        Command::Eval(EvalCommand::Grid(a)) => commands::eval_grid(a),
        Command::Eval(EvalCommand::Morph(a)) => commands::eval_morph(a),
        Command::Synth(a) => commands::synth(a),
        Command::Serve(a) => serve(a),
        Command::BenchSampler(a) => commands::bench(a),
    }
}
