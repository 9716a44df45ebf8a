//! The optimization loop shared by both networks.

use std::ops::ControlFlow;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::report::{CheckpointRecord, RunReport};
use super::TrainError;
use crate::autograd::{clip_global_norm, lr_schedule, save_checkpoint, Adam, Checkpoint, Graph, ParamStore, Var};
use crate::data::{Corpus, Example, Split};
use crate::dsp::{tanh_log_compress, MelSpectrogram, HOP};
use crate::matrix::Matrix;
use crate::mel2mel::{loss_graph, Mel2Mel};
use crate::wavenet::WaveNet;

/// Seed of the held-out slices every run is scored on.
pub const VALIDATION_SEED: u64 = 0x5eed_0f_7a11;

/// A network the trainer can optimize.
pub trait Objective: Sized {
    fn build(config: &TrainConfig, corpus: &Corpus) -> Result<Self, TrainError>;
    fn restore(checkpoint: &Checkpoint) -> Result<Self, TrainError>;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Samples of history prepended to every training slice.
    fn context_samples(&self) -> usize {
        0
    }
    /// Mean loss of a batch of equal-length examples.
    fn batch_loss(&self, g: &mut Graph, batch: &[Example], config: &TrainConfig) -> Result<Var, TrainError>;
    fn to_checkpoint(&self) -> Checkpoint;
}

impl Objective for Mel2Mel {
    fn build(config: &TrainConfig, corpus: &Corpus) -> Result<Self, TrainError> {
        Ok(Mel2Mel::new(config.mel2mel_config(corpus.instruments()), config.seed)?)
    }

    fn restore(checkpoint: &Checkpoint) -> Result<Self, TrainError> {
        Ok(Mel2Mel::from_checkpoint(checkpoint)?)
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[Example], config: &TrainConfig) -> Result<Var, TrainError> {
        let rows = self.config.architecture().input;
        let inputs: Vec<Matrix> = batch.iter().map(|e| rows.select(&e.input)).collect();
        let x = g.leaf(Matrix::hstack(&inputs.iter().collect::<Vec<_>>()));
        let ids: Vec<usize> = batch.iter().map(|e| e.instrument).collect();
        let embed = self.embed(g, &ids)?;
        let pred = self.forward_graph(g, x, embed, batch[0].mel.frames())?;
        let target = MelSpectrogram::from_linear(Matrix::hstack(&batch.iter().map(|e| &e.mel.values).collect::<Vec<_>>()));
        Ok(loss_graph(g, pred, &target, config.loss)?)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Mel2Mel::to_checkpoint(self)
    }
}

impl Objective for WaveNet {
    fn build(config: &TrainConfig, _corpus: &Corpus) -> Result<Self, TrainError> {
        Ok(WaveNet::new(config.wavenet.clone(), config.seed)?)
    }

    fn restore(checkpoint: &Checkpoint) -> Result<Self, TrainError> {
        Ok(WaveNet::from_checkpoint(checkpoint)?)
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[Example], _config: &TrainConfig) -> Result<Var, TrainError> {
        let codes: Vec<&[u8]> = batch.iter().map(|e| e.codes.as_slice()).collect();
        let mels: Vec<Matrix> = batch.iter().map(|e| tanh_log_compress(&e.mel)).collect();
        let mel = Matrix::hstack(&mels.iter().collect::<Vec<_>>());
        let scored_from = vec![self.context_samples(); batch.len()];
        Ok(self.loss_graph_from(g, &codes, &mel, &scored_from)?)
    }

    fn context_samples(&self) -> usize {
        self.config.context_samples()
    }

    fn to_checkpoint(&self) -> Checkpoint {
        WaveNet::to_checkpoint(self)
    }
}

/// What the observer sees after every iteration.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    /// Completed iterations.
    pub iteration: u64,
    pub total: u64,
    pub train_loss: f64,
    pub checkpoint: Option<CheckpointRecord>,
}

pub struct Trainer<'c, M: Objective> {
    pub config: TrainConfig,
    pub model: M,
    corpus: &'c Corpus,
    adam: Adam,
    step: u64,
    train_pool: Vec<usize>,
    /// Samples of history in front of each drawn slice.
    context: usize,
    validation: Vec<Example>,
    checkpoint_path: Option<PathBuf>,
}

fn usable(corpus: &Corpus, split: Split, length: usize) -> Vec<usize> {
    corpus
        .split(split)
        .into_iter()
        .filter(|&i| corpus.renders[i].frames() * HOP >= length)
        .collect()
}

fn draw(corpus: &Corpus, pool: &[usize], length: usize, context: usize, rng: &mut ChaCha8Rng) -> Result<Example, TrainError> {
    let index = pool[rng.gen_range(0..pool.len())];
    let last_start = corpus.renders[index].frames() - length / HOP;
    let offset = rng.gen_range(0..=last_start) * HOP;
    Ok(corpus.example_with_context(index, offset, length, context)?)
}

impl<'c, M: Objective> Trainer<'c, M> {
    pub fn new(config: TrainConfig, corpus: &'c Corpus) -> Result<Self, TrainError> {
        config.validate()?;
        let model = M::build(&config, corpus)?;
        let adam = Adam::new(model.params(), config.learning_rate);
        Self::assemble(config, corpus, model, adam, 0)
    }

    /// Continues from a checkpoint written by [`Self::checkpoint`].
    pub fn resume(config: TrainConfig, corpus: &'c Corpus, checkpoint: &Checkpoint) -> Result<Self, TrainError> {
        config.validate()?;
        let model = M::restore(checkpoint)?;
        let adam = checkpoint
            .optimizer
            .clone()
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
        Self::assemble(config, corpus, model, adam, checkpoint.step)
    }

    fn assemble(config: TrainConfig, corpus: &'c Corpus, model: M, adam: Adam, step: u64) -> Result<Self, TrainError> {
        let length = config.sequence_length;
        let context = model.context_samples();
        let train_pool = usable(corpus, Split::Train, length);
        if train_pool.is_empty() {
            return Err(TrainError::NoTrainingData { sequence_length: length });
        }
        let mut validation_pool = usable(corpus, Split::Validation, length);
        if validation_pool.is_empty() {
            log::warn!("no validation render holds {length} samples; validating on training renders");
            validation_pool = train_pool.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
        let validation = (0..config.validation_batches * config.batch_size)
            .map(|_| draw(corpus, &validation_pool, length, context, &mut rng))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config,
            model,
            corpus,
            adam,
            step,
            train_pool,
            context,
            validation,
            checkpoint_path: None,
        })
    }

    /// Writes the latest checkpoint to `path` at every validation point.
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn completed(&self) -> u64 {
        self.step
    }

    /// The batch for `iteration`, a pure function of the run seed.
    pub fn batch(&self, iteration: u64) -> Result<Vec<Example>, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iteration);
        (0..self.config.batch_size)
            .map(|_| draw(self.corpus, &self.train_pool, self.config.sequence_length, self.context, &mut rng))
            .collect()
    }

    /// One optimizer update; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let batch = self.batch(self.step)?;
        let mut g = Graph::new();
        let loss = self.model.batch_loss(&mut g, &batch, &self.config)?;
        let value = g.scalar(loss);
        let diverged = |loss: f64, iteration: u64| TrainError::Diverged { iteration, loss };
        if !value.is_finite() {
            return Err(diverged(value, self.step));
        }
        let grads = g.backward(loss);
        let mut pg = g.param_grads(&grads, self.model.params());
        if self.config.grad_clip > 0.0 {
            clip_global_norm(&mut pg, self.config.grad_clip);
        }
        self.adam.learning_rate = lr_schedule(self.config.learning_rate, self.config.lr_halve_every, self.step);
        self.adam
            .step(self.model.params_mut(), &pg)
            .map_err(|_| diverged(value, self.step))?;
        self.step += 1;
        Ok(value)
    }

    /// Mean loss over the fixed held-out slices.
    pub fn validation_loss(&self) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for batch in self.validation.chunks(self.config.batch_size) {
            let mut g = Graph::new();
            let loss = self.model.batch_loss(&mut g, batch, &self.config)?;
            total += g.scalar(loss);
        }
        Ok(total / self.config.validation_batches as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.step = self.step;
        ck.optimizer = Some(self.adam.clone());
        ck
    }

    fn record(&self, since: &[f64]) -> Result<CheckpointRecord, TrainError> {
        let record = CheckpointRecord {
            iteration: self.step,
            train_loss: since.iter().sum::<f64>() / since.len() as f64,
            validation_loss: self.validation_loss()?,
        };
        if let Some(path) = &self.checkpoint_path {
            save_checkpoint(path, &self.checkpoint())?;
        }
        Ok(record)
    }

    /// Trains to `config.iterations` or until the observer breaks; the
    /// stopping iteration always gets a checkpoint.
    pub fn run(&mut self, label: &str, mut observer: impl FnMut(&Progress) -> ControlFlow<()>) -> Result<RunReport, TrainError> {
        let total = self.config.iterations;
        let mut losses = Vec::new();
        let mut checkpoints = Vec::new();
        let mut since_checkpoint = 0;
        while self.step < total {
            let loss = self.step()?;
            losses.push(loss);
            since_checkpoint += 1;
            let due = self.step % self.config.validation_every == 0 || self.step == total;
            let mut progress = Progress {
                iteration: self.step,
                total,
                train_loss: loss,
                checkpoint: None,
            };
            if due {
                let record = self.record(&losses[losses.len() - since_checkpoint..])?;
                checkpoints.push(record);
                since_checkpoint = 0;
                progress.checkpoint = Some(record);
            }
            if observer(&progress).is_break() {
                if !due {
                    checkpoints.push(self.record(&losses[losses.len() - since_checkpoint..])?);
                }
                break;
            }
        }
        Ok(RunReport::new(label, self.config.clone(), losses, checkpoints))
    }
}
