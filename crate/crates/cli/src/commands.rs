//! Subcommand implementations.

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use melsynth::autograd::load_checkpoint;
use melsynth::data::{builtin_patch_bank, generate_corpus, Corpus, CorpusConfig, DatasetManifest, Split, MANIFEST_FILE};
use melsynth::dsp::{read_wav, write_wav, AudioBuffer, MelSpectrogram, HOP, SAMPLE_RATE};
use melsynth::eval::{
    degradation_curves, embedding_grid, heatmap_png, line_plot_png, morph_path, per_instrument_breakdown, probe_input,
    write_png, CorrelationCurve, DegradationStage, EvalModels, EvalTrack,
};
use melsynth::matrix::Matrix;
use melsynth::mel2mel::{LossKind, Mel2Mel, Variant};
use melsynth::midi::parse_midi;
use melsynth::synth::{
    notes_input, EmbeddingSpec, MidiSource, SynthesisRequest, Synthesizer, INSTRUMENT_NAMES, MEL2MEL_CHECKPOINT,
    WAVENET_CHECKPOINT,
};
use melsynth::train::{
    run_ablation_suite, Objective, Progress, RunReport, ScalePreset, TrainConfig, TrainTarget, Trainer,
};
use melsynth::wavenet::{bench_sampler, SamplingMode, WaveNet, WaveNetConfig};
use melsynth::dsp::{mean_energy, spectral_centroid};

use crate::args::{AblateArgs, BenchArgs, DatasetArgs, DegradationArgs, GridArgs, MorphArgs, PresetArg, SynthArgs, TrainArgs};

/// Text matrix dumps of the two grid maps, read back by the service.
pub const GRID_CENTROID: &str = "grid_centroid.txt";
pub const GRID_ENERGY: &str = "grid_energy.txt";
pub const GRID_META: &str = "grid.json";

const CONFIG_FILE: &str = "config.toml";
const FULL_TRACKS: usize = 3_340;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut bytes = Vec::new();
    m.write_text(&mut bytes)?;
    write_file(path, bytes)
}

pub fn load_corpus(data: &Path) -> Result<Corpus> {
    let manifest = DatasetManifest::load(data.join(MANIFEST_FILE))?;
    log::info!("loading {} renders from {}", manifest.entries.len(), data.display());
    Ok(Corpus::load(&manifest)?)
}

pub fn dataset(args: &DatasetArgs) -> Result<()> {
    let mut config = CorpusConfig::desk(args.seed);
    if args.preset == PresetArg::Full {
        config.n_tracks = FULL_TRACKS;
    }
    if let Some(path) = &args.config {
        let mut table = toml::Value::try_from(&config)?;
        let overrides: toml::Table = toml::from_str(&read_text(path)?)?;
        if let toml::Value::Table(t) = &mut table {
            t.extend(overrides);
        }
        config = table.try_into()?;
    }
    let manifest = generate_corpus(&config, &args.out)?;
    println!(
        "wrote {} renders of {} tracks to {}",
        manifest.entries.len(),
        config.n_tracks,
        args.out.display()
    );
    Ok(())
}

/// The preset for `target`, overridden by the config file and `--seed`.
pub fn train_config(target: TrainTarget, preset: PresetArg, file: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let base = TrainConfig::preset(target, ScalePreset::from(preset));
    let mut config = match file {
        Some(path) => TrainConfig::from_toml_over(&base, &read_text(path)?)?,
        None => base,
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn log_progress(label: &str, p: &Progress) {
    if let Some(c) = p.checkpoint {
        log::info!(
            "{label} {}/{}: train {:.5} validation {:.5}",
            c.iteration,
            p.total,
            c.train_loss,
            c.validation_loss
        );
    }
}

fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    write_file(&out.join("report.jsonl"), report.to_json_lines())?;
    let table = format!(
        "| Run | Train loss (×10³) | Validation loss (×10³) |\n|---|---|---|\n{}\n",
        report.table_row()
    );
    write_file(&out.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn train_objective<M: Objective>(target: TrainTarget, args: &TrainArgs, file: &str, label: &str) -> Result<(RunReport, M, usize)> {
    let config = train_config(target, args.preset, args.config.as_deref(), args.seed)?;
    let corpus = load_corpus(&args.data)?;
    create_dir(&args.out)?;
    write_file(&args.out.join(CONFIG_FILE), config.to_toml())?;
    let path = args.out.join(file);
    let mut trainer = if args.resume {
        let ck = load_checkpoint(&path)?;
        log::info!("resuming {label} at iteration {}", ck.step);
        Trainer::<M>::resume(config, &corpus, &ck)?
    } else {
        Trainer::<M>::new(config, &corpus)?
    };
    trainer = trainer.with_checkpoint_path(&path);
    let report = trainer.run(label, |p| {
        log_progress(label, p);
        ControlFlow::Continue(())
    })?;
    write_report(&args.out, &report)?;
    let instruments = corpus.instruments();
    Ok((report, trainer.model, instruments))
}

pub fn train_mel2mel(args: &TrainArgs) -> Result<()> {
    let (_, _, instruments): (_, Mel2Mel, _) = train_objective(TrainTarget::Mel2mel, args, MEL2MEL_CHECKPOINT, "mel2mel")?;
    let names: String = builtin_patch_bank()
        .iter()
        .take(instruments)
        .map(|p| format!("{}\n", p.name))
        .collect();
    write_file(&args.out.join(INSTRUMENT_NAMES), names)
}

pub fn train_wavenet(args: &TrainArgs) -> Result<()> {
    let _: (_, WaveNet, _) = train_objective(TrainTarget::Wavenet, args, WAVENET_CHECKPOINT, "wavenet")?;
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let base = train_config(TrainTarget::Mel2mel, args.preset, args.config.as_deref(), None)?;
    let variants: Vec<Variant> = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?
    };
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let corpus = load_corpus(&args.data)?;
    create_dir(&args.out)?;
    let table = run_ablation_suite(&base, &variants, &seeds, &corpus, |variant, seed, p| {
        log_progress(&format!("{variant} seed {seed}"), p)
    });
    let rendered = table.render();
    write_file(&args.out.join("ablation.md"), &rendered)?;
    write_file(&args.out.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
    print!("{rendered}");
    Ok(())
}

fn load_mel2mel(path: &Path) -> Result<Mel2Mel> {
    Ok(Mel2Mel::from_checkpoint(&load_checkpoint(path)?)?)
}

/// Loss kind recorded in the `config.toml` next to a checkpoint.
fn recorded_loss(checkpoint: &Path) -> Result<LossKind> {
    let config = checkpoint.with_file_name(CONFIG_FILE);
    if !config.exists() {
        return Ok(LossKind::TanhLogAbsMse);
    }
    let preset = TrainConfig::desk(TrainTarget::Mel2mel);
    Ok(TrainConfig::from_toml_over(&preset, &read_text(&config)?)?.loss)
}

/// Validation excerpts of the corpus, `per_instrument` tracks each.
pub fn eval_tracks(data: &Path, per_instrument: usize, seconds: f64) -> Result<Vec<EvalTrack>> {
    let manifest = DatasetManifest::load(data.join(MANIFEST_FILE))?;
    let corpus = Corpus::load(&manifest)?;
    let len = ((seconds * f64::from(SAMPLE_RATE)) as usize).div_ceil(HOP) * HOP;
    let mut taken = vec![0; corpus.instruments()];
    let mut tracks = Vec::new();
    for index in corpus.split(Split::Validation) {
        let render = &corpus.renders[index];
        if taken[render.instrument] >= per_instrument {
            continue;
        }
        let path = render.audio_path.as_ref().ok_or_else(|| anyhow!("render {index} has no audio file"))?;
        let mut samples = read_wav(path)?.samples;
        samples.resize(len, 0.0);
        let notes = &corpus.tracks[render.track].notes;
        tracks.push(EvalTrack::new(render.instrument, notes, &AudioBuffer::new(samples)));
        taken[render.instrument] += 1;
    }
    if tracks.is_empty() {
        bail!("{} has no validation renders", data.display());
    }
    Ok(tracks)
}

fn curve_label(c: &CorrelationCurve) -> String {
    match c.instrument {
        Some(i) => format!("{}\t{i}", c.stage),
        None => format!("{}\tall", c.stage),
    }
}

pub fn eval_degradation(args: &DegradationArgs) -> Result<()> {
    let dir = &args.checkpoints.checkpoints;
    let wavenet_path = dir.join(WAVENET_CHECKPOINT);
    let wavenet = if wavenet_path.exists() {
        Some(WaveNet::from_checkpoint(&load_checkpoint(&wavenet_path)?)?.inference())
    } else {
        None
    };
    let mut mel2mel_paths: Vec<(LossKind, PathBuf)> = Vec::new();
    let default = dir.join(MEL2MEL_CHECKPOINT);
    if default.exists() {
        mel2mel_paths.push((recorded_loss(&default)?, default));
    }
    for spec in &args.mel2mel {
        let (kind, path) = spec.split_once('=').ok_or_else(|| anyhow!("expected LOSS=PATH, got `{spec}`"))?;
        let kind: LossKind = kind.parse()?;
        mel2mel_paths.retain(|(k, _)| *k != kind);
        mel2mel_paths.push((kind, PathBuf::from(path)));
    }
    let models: Vec<(LossKind, Mel2Mel)> = mel2mel_paths
        .iter()
        .map(|(k, p)| Ok((*k, load_mel2mel(p)?)))
        .collect::<Result<_>>()?;
    let pairs: Vec<(LossKind, &Mel2Mel)> = models.iter().map(|(k, m)| (*k, m)).collect();
    let mut stages = vec![DegradationStage::Original, DegradationStage::MulawRoundtrip];
    if wavenet.is_some() {
        stages.push(DegradationStage::WavenetGroundTruthMel);
        stages.extend(pairs.iter().map(|(k, _)| DegradationStage::WavenetPredictedMel(*k)));
    }
    let tracks = eval_tracks(&args.data, args.tracks, args.seconds)?;
    log::info!("evaluating {} stages on {} excerpts", stages.len(), tracks.len());
    let eval_models = EvalModels {
        wavenet: wavenet.as_ref(),
        mel2mel: &pairs,
        sampling: SamplingMode::Temperature(1.0),
        seed: args.seed,
    };
    let curves = degradation_curves(&tracks, &stages, &eval_models)?;
    write_curves(&args.out, &curves, &stages)
}

/// Writes `curves.tsv`, the per-bin matrix, and the aggregate and breakdown plots.
pub fn write_curves(out: &Path, curves: &[CorrelationCurve], stages: &[DegradationStage]) -> Result<()> {
    create_dir(out)?;
    let mut table = String::from("# stage\tinstrument\ttracks\toctave_1..octave_7\tmean\n");
    for c in curves {
        let octaves: Vec<String> = c.octaves().iter().map(|v| format!("{v:.6}")).collect();
        table.push_str(&format!("{}\t{}\t{}\t{:.6}\n", curve_label(c), c.tracks, octaves.join("\t"), c.mean()));
    }
    write_file(&out.join("curves.tsv"), &table)?;
    let bins = Matrix::from_fn(curves.len(), curves.first().map_or(0, |c| c.bins.len()), |r, k| curves[r].bins[k]);
    write_text_matrix(&out.join("curves_bins.txt"), &bins)?;
    let aggregate: Vec<Vec<f64>> = curves.iter().filter(|c| c.instrument.is_none()).map(|c| c.octaves()).collect();
    write_png(out.join("degradation.png"), &line_plot_png(&aggregate, (-0.2, 1.0), 480, 320))?;
    if let Some(&stage) = stages.last() {
        let parts: Vec<Vec<f64>> = per_instrument_breakdown(curves, stage).iter().map(|c| c.octaves()).collect();
        write_png(out.join("breakdown.png"), &line_plot_png(&parts, (-0.2, 1.0), 480, 320))?;
    }
    print!("{table}");
    Ok(())
}

pub fn eval_grid(args: &GridArgs) -> Result<()> {
    let dir = &args.checkpoints.checkpoints;
    let synth = Synthesizer::load_dir(dir)?;
    let model = synth.mel2mel().ok_or_else(|| anyhow!("{} has no {MEL2MEL_CHECKPOINT}", dir.display()))?;
    let out = args.out.as_ref().unwrap_or(dir);
    create_dir(out)?;
    log::info!("evaluating a {0}x{0} grid", args.resolution);
    let grid = embedding_grid(model, args.resolution, &probe_input())?;
    let markers: Vec<(usize, usize)> = grid.instruments.iter().map(|p| p.pixel).collect();
    write_text_matrix(&out.join(GRID_CENTROID), &grid.centroid)?;
    write_text_matrix(&out.join(GRID_ENERGY), &grid.energy)?;
    write_png(out.join("grid_centroid.png"), &heatmap_png(&grid.centroid, &markers))?;
    write_png(out.join("grid_energy.png"), &heatmap_png(&grid.energy, &markers))?;
    let names = synth.instruments();
    let meta = serde_json::json!({
        "resolution": grid.resolution,
        "bounds": grid.bounds,
        "instruments": grid.instruments.iter().map(|p| serde_json::json!({
            "id": p.instrument,
            "name": names[p.instrument].0,
            "coords": p.coords,
            "pixel": [p.pixel.0, p.pixel.1],
        })).collect::<Vec<_>>(),
    });
    write_file(&out.join(GRID_META), serde_json::to_string_pretty(&meta)?)?;
    println!("wrote grid maps to {}", out.display());
    Ok(())
}

fn midi_input(path: Option<&Path>) -> Result<Matrix> {
    Ok(match path {
        Some(p) => notes_input(&parse_midi(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)?.notes),
        None => probe_input(),
    })
}

pub fn eval_morph(args: &MorphArgs) -> Result<()> {
    let synth = Synthesizer::load_dir(&args.checkpoints.checkpoints)?;
    let model = synth.mel2mel().ok_or_else(|| anyhow!("no {MEL2MEL_CHECKPOINT} loaded"))?;
    let a = synth.resolve(&EmbeddingSpec::Instrument(args.from))?;
    let b = synth.resolve(&EmbeddingSpec::Instrument(args.to))?;
    let path = morph_path(model, &midi_input(args.midi.as_deref())?, &a, &b, args.steps)?;
    create_dir(&args.out)?;
    let mut table = String::from("# step\tlambda\tpoint\tcentroid_hz\tmean_energy_db\n");
    for (i, step) in path.iter().enumerate() {
        let linear = MelSpectrogram::from_compressed(&step.mel);
        let point: Vec<String> = step.point.iter().map(|v| format!("{v:.6}")).collect();
        table.push_str(&format!(
            "{i}\t{:.4}\t{}\t{:.3}\t{:.3}\n",
            step.lambda,
            point.join(","),
            spectral_centroid(&linear),
            mean_energy(&linear)
        ));
        write_text_matrix(&args.out.join(format!("morph_{i}.mel.txt")), &step.mel)?;
        write_png(args.out.join(format!("morph_{i}.mel.png")), &heatmap_png(&step.mel, &[]))?;
    }
    write_file(&args.out.join("morph.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

/// `FROM:TO:STEPS`.
pub fn parse_morph(spec: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [from, to, steps] = parts[..] else {
        bail!("--morph expects FROM:TO:STEPS, got `{spec}`");
    };
    let steps: usize = steps.parse()?;
    if steps < 2 {
        bail!("--morph needs at least 2 steps");
    }
    Ok((from.parse()?, to.parse()?, steps))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let synthesizer = Synthesizer::load_dir(&args.checkpoints.checkpoints)?;
    let midi = match &args.midi {
        Some(p) => MidiSource::Smf(fs::read(p).with_context(|| format!("reading {}", p.display()))?),
        None => MidiSource::Probe,
    };
    let jobs: Vec<(EmbeddingSpec, PathBuf)> = match (&args.instrument, &args.embedding, &args.morph) {
        (Some(id), None, None) => vec![(EmbeddingSpec::Instrument(*id), args.out.clone())],
        (None, Some(v), None) => vec![(EmbeddingSpec::Vector(v.clone()), args.out.clone())],
        (None, None, Some(spec)) => {
            let (from, to, steps) = parse_morph(spec)?;
            (0..steps)
                .map(|i| {
                    let lambda = i as f64 / (steps - 1) as f64;
                    (EmbeddingSpec::Morph { from, to, lambda }, sibling(&args.out, &format!("_{i}.wav")))
                })
                .collect()
        }
        _ => bail!("give exactly one of --instrument, --embedding or --morph"),
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    for (embedding, wav) in jobs {
        let request = SynthesisRequest {
            midi: midi.clone(),
            embedding,
            vocoder: Some(args.vocoder.into()),
            temperature: args.temperature,
            seed: args.seed,
        };
        let response = synthesizer.synthesize(&request)?;
        if let Some(audio) = &response.waveform {
            write_wav(&wav, audio)?;
        }
        write_file(&sibling(&wav, ".mel"), response.mel.to_dump_bytes())?;
        write_png(sibling(&wav, ".mel.png"), &heatmap_png(&response.mel, &[]))?;
        let t = response.timings;
        println!(
            "{}: {} frames (input {:.1} ms, mel {:.1} ms, vocoder {:.1} ms)",
            wav.display(),
            response.mel.cols(),
            t.input_ms,
            t.mel_ms,
            t.vocoder_ms
        );
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let config = match args.preset {
        PresetArg::Full => WaveNetConfig::full(),
        PresetArg::Desk => WaveNetConfig::desk(),
    };
    let report = bench_sampler(&config, args.samples)?;
    println!(
        "receptive field {}: cached {:.1} samples/s, naive {:.2} samples/s, speedup {:.1}x",
        report.receptive_field, report.cached_samples_per_second, report.naive_samples_per_second, report.speedup
    );
    if let Some(out) = &args.out {
        write_file(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
