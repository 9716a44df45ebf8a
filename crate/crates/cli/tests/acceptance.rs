//! Prints one PASS or FAIL line per primary acceptance criterion.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use melsynth::autograd::gradcheck::{check, random_matrix};
use melsynth::autograd::{save_checkpoint, AutogradError, Graph, ParamId, Var};
use melsynth::data::smf::SmfWriter;
use melsynth::data::{builtin_patch_bank, generate_corpus, generate_track, render, Corpus, CorpusConfig, DatasetManifest, Split};
use melsynth::dsp::{
    cqt_log_mag, mel_filterbank, mulaw_decode, mulaw_encode, pearson, sine, tanh_log_compress,
    AudioBuffer, HOP, SAMPLE_RATE,
};
use melsynth::eval::{
    bin_correlations, degradation_curves, embedding_grid, probe_input, CorrelationCurve, DegradationStage, EvalModels,
};
use melsynth::mel2mel::{LossKind, Mel2Mel, Mel2MelConfig, Variant};
use melsynth::midi::{NoteEvent, INPUT_ROWS};
use melsynth::synth::{INSTRUMENT_NAMES, MEL2MEL_CHECKPOINT, WAVENET_CHECKPOINT};
use melsynth::train::{run_ablation_suite, RunReport, TrainConfig, TrainTarget, Trainer};
use melsynth::wavenet::{
    bench_sampler, sample, sample_codes_cached, sample_codes_naive, shifted_inputs, SamplingMode, WaveNet, WaveNetConfig,
};
use melsynth_cli::commands::eval_tracks;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ACCEPTANCE_WAVENET_ITERATIONS: u64 = 1_000;
const GRID_RESOLUTION: usize = 320;
const MIN_PIXEL_SEPARATION: f64 = 3.0;
const OVERFIT_PATCH: usize = 1;
const MIN_CLIP_CEILING: f64 = 0.9;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

/// Artifacts shared between criteria.
struct Workspace {
    root: tempfile::TempDir,
    corpus: Option<(PathBuf, Corpus)>,
    desk_mel2mel: Option<Mel2Mel>,
    desk_wavenet: Option<WaveNet>,
}

impl Workspace {
    fn desk_corpus(&mut self) -> Result<&(PathBuf, Corpus)> {
        if self.corpus.is_none() {
            let dir = self.root.path().join("desk");
            let manifest = generate_corpus(&CorpusConfig::desk(0), &dir)?;
            let corpus = Corpus::load(&DatasetManifest::load(manifest.root.join(melsynth::data::MANIFEST_FILE))?)?;
            self.corpus = Some((dir, corpus));
        }
        Ok(self.corpus.as_ref().expect("just loaded"))
    }
}

fn autograd(e: impl std::fmt::Display) -> AutogradError {
    panic!("model error during gradient check: {e}")
}

fn live_wavenet(config: WaveNetConfig, seed: u64) -> Result<WaveNet> {
    let mut model = WaveNet::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    for name in ["post2.w", "post2.b"] {
        let id = model.params.id(name)?;
        model.params.get_mut(id).value.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
    }
    Ok(model)
}

fn gradient_checks(_: &mut Workspace) -> Result<Verdict> {
    type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, AutogradError>>;
    let mut worst: Vec<(String, f64)> = Vec::new();
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |rows, cols| random_matrix(rows, cols, 1.0, &mut rng);
        let lstm_weights = |r: &mut dyn FnMut(usize, usize) -> _| vec![r(8, 3), r(8, 2), r(8, 1)];
        let mut cases: Vec<(&str, Vec<_>, Build)> = vec![
            ("linear", vec![r(4, 3), r(3, 5), r(4, 1)], Box::new(|g, v| g.linear(v[0], v[1], v[2]))),
            ("film", vec![r(3, 8), r(3, 2), r(3, 2)], Box::new(|g, v| g.film(v[0], v[1], v[2], 4))),
            (
                "dilated_conv",
                vec![r(3, 10), r(4, 3)],
                Box::new(|g, v| g.dilated_conv(v[0], v[1], 2, 5)),
            ),
            (
                "transposed_conv",
                vec![r(3, 6), r(8, 3), r(2, 1)],
                Box::new(|g, v| g.transposed_conv(v[0], v[1], v[2], 2, 4, 3)),
            ),
        ];
        let mut lstm_inputs = vec![r(3, 8)];
        lstm_inputs.extend(lstm_weights(&mut r));
        cases.push(("lstm", lstm_inputs.clone(), Box::new(|g, v| g.lstm(v[0], v[1], v[2], v[3], 4, false))));
        lstm_inputs.extend(lstm_weights(&mut r));
        cases.push((
            "bilstm",
            lstm_inputs,
            Box::new(|g, v| {
                let f = g.lstm(v[0], v[1], v[2], v[3], 4, false)?;
                let b = g.lstm(v[0], v[4], v[5], v[6], 4, true)?;
                g.concat_rows(&[f, b])
            }),
        ));

        let config = Mel2MelConfig {
            n_instruments: 3,
            embed_dim: 2,
            hidden: 6,
            lstm_units: 3,
            variant: Variant::Proposed,
        };
        let mel2mel = Mel2Mel::new(config, seed)?;
        let mut inputs = vec![r(INPUT_ROWS, 5).map(f64::abs), r(2, 1)];
        inputs.extend(mel2mel.params.iter().map(|(_, p)| p.value.clone()));
        cases.push((
            "mel2mel",
            inputs,
            Box::new(move |g, v| {
                mel2mel
                    .forward_graph_with(g, v[0], v[1], 5, &|id: ParamId| v[2 + id.index()])
                    .map_err(autograd)
            }),
        ));

        let wavenet = live_wavenet(WaveNetConfig::tiny(2), seed)?;
        let codes: Vec<u8> = (0..5).map(|i| (i * 53 + seed as usize * 7) as u8).collect();
        let ids = shifted_inputs(&[&codes]);
        let mut inputs = vec![r(wavenet.config.cond_channels, 5)];
        inputs.extend(wavenet.params.iter().map(|(_, p)| p.value.clone()));
        cases.push((
            "wavenet",
            inputs,
            Box::new(move |g, v| {
                wavenet
                    .logits_graph(g, &|id: ParamId| v[1 + id.index()], &ids, v[0], 5)
                    .map_err(autograd)
            }),
        ));

        for (name, inputs, build) in cases {
            let report = check(&inputs, seed, build)?;
            match worst.iter_mut().find(|(n, _)| n == name) {
                Some((_, e)) => *e = e.max(report.max_error()),
                None => worst.push((name.to_string(), report.max_error())),
            }
        }
    }
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok(Verdict::new(
        max < 1e-4,
        format!("max relative error over {} seeds: {}", SEEDS.len(), detail.join(", ")),
    ))
}

fn argmax_bin(audio: &AudioBuffer) -> Result<usize> {
    let cqt = cqt_log_mag(audio)?;
    let energy: Vec<f64> = (0..cqt.values.rows()).map(|k| cqt.values.row(k).iter().sum()).collect();
    Ok((0..energy.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).expect("bins"))
}

fn dsp_oracles(_: &mut Workspace) -> Result<Verdict> {
    let mulaw = (0..=255u8).all(|c| mulaw_encode(mulaw_decode(c)) == c);
    let fb = mel_filterbank();
    let row_error = (0..fb.rows())
        .map(|k| (fb.row(k).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let len = SAMPLE_RATE as usize;
    let base = argmax_bin(&sine(440.0, 0.5, len))?;
    let up = argmax_bin(&sine(880.0, 0.5, len))? as i64 - base as i64;
    let down = argmax_bin(&sine(220.0, 0.5, len))? as i64 - base as i64;
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [1.0, 2.0, 3.0, 5.0];
    let closed_form = 6.5 / (5.0f64 * 8.75).sqrt();
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let pearson_error = [
        (pearson(&a, &b)?, closed_form),
        (pearson(&a, &a)?, 1.0),
        (pearson(&a, &neg)?, -1.0),
    ]
    .iter()
    .map(|(got, want)| (got - want).abs())
    .fold(0.0, f64::max);
    let passed = mulaw && row_error < 1e-6 && up == 12 && down == -12 && pearson_error < 1e-4;
    Ok(Verdict::new(
        passed,
        format!(
            "mulaw identity {mulaw}, filterbank row error {row_error:.1e}, octave shifts {up:+}/{down:+}, pearson error {pearson_error:.1e}"
        ),
    ))
}

fn sampler_equivalence(_: &mut Workspace) -> Result<Verdict> {
    let mut identical = true;
    for seed in 1..=3 {
        let model = live_wavenet(WaveNetConfig::tiny(4), seed)?;
        let weights = model.inference();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond = random_matrix(model.config.cond_channels, 1_000, 1.0, &mut rng);
        let proj = weights.project(&cond);
        let mode = SamplingMode::Temperature(1.0);
        identical &= sample_codes_cached(&weights, &proj, mode, seed) == sample_codes_naive(&weights, &proj, mode, seed);
    }
    let report = bench_sampler(&WaveNetConfig::full(), 4_000)?;
    Ok(Verdict::new(
        identical && report.speedup >= 20.0,
        format!(
            "1000 samples x 3 seeds identical: {identical}; full config speedup {:.1}x ({:.0} vs {:.1} samples/s)",
            report.speedup, report.cached_samples_per_second, report.naive_samples_per_second
        ),
    ))
}

fn receptive_field(_: &mut Workspace) -> Result<Verdict> {
    let model = live_wavenet(WaveNetConfig::tiny(4), 9)?;
    let len = 64;
    let t = 50;
    let cond = random_matrix(model.config.cond_channels, len, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let codes: Vec<u8> = (0..len).map(|i| (i * 37 % 256) as u8).collect();
    let reference = model.logits(&codes, &cond)?.column(t);
    let mut sensitive = Vec::new();
    for back in 1..=t {
        let mut changed = codes.clone();
        changed[t - back] = changed[t - back].wrapping_add(91);
        if model.logits(&changed, &cond)?.column(t) != reference {
            sensitive.push(back);
        }
    }
    let expected: Vec<usize> = (1..=15).collect();
    Ok(Verdict::new(
        sensitive == expected,
        format!(
            "dilations {:?}: output depends on {} past samples (furthest {})",
            model.config.dilations,
            sensitive.len(),
            sensitive.last().copied().unwrap_or(0)
        ),
    ))
}

fn tiny_corpus(tracks: usize, seconds: f64, patches: &[usize], seed: u64) -> Corpus {
    let bank = builtin_patch_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (seconds * f64::from(SAMPLE_RATE)) as usize;
    let mut corpus = Corpus::new();
    for i in 0..tracks {
        let notes = generate_track(&mut rng, seconds);
        let track = corpus.add_track(format!("clip{i}"), notes, len / HOP, Split::Train);
        for (instrument, &patch) in patches.iter().enumerate() {
            let audio = render(&corpus.tracks[track].notes.clone(), &bank[patch], len);
            corpus.add_render(track, instrument, &audio, None).expect("render fits its track");
        }
    }
    corpus
}

fn overfit(_: &mut Workspace) -> Result<Verdict> {
    let corpus = tiny_corpus(2, 8.0, &[0, 1, 2], 11);
    let config = TrainConfig::desk(TrainTarget::Mel2mel);
    let mut trainer = Trainer::<Mel2Mel>::new(config, &corpus)?;
    let mut initial = None;
    let mut reached = None;
    trainer.run("overfit-mel2mel", |p| {
        let first = *initial.get_or_insert(p.train_loss);
        match p.checkpoint {
            Some(c) if c.train_loss < 0.25 * first => {
                reached = Some((c.iteration, c.train_loss / first));
                ControlFlow::Break(())
            }
            _ => ControlFlow::Continue(()),
        }
    })?;
    let mel2mel_ok = reached.is_some();
    let mel2mel = match reached {
        Some((it, ratio)) => format!("mel2mel at {:.1}% of initial loss by iteration {it}", 100.0 * ratio),
        None => "mel2mel never below 25% of initial loss".into(),
    };

    let (clip_seed, clip) = overfit_clip()?;
    let mut config = TrainConfig::desk(TrainTarget::Wavenet);
    config.batch_size = 1;
    config.iterations = 2_000;
    config.learning_rate = 0.002;
    config.lr_halve_every = 1_000;
    config.validation_every = 100;
    config.validation_batches = 1;
    let mut trainer = Trainer::<WaveNet>::new(config, &clip)?;
    let mut first_below = None;
    let report = trainer.run("overfit-wavenet", |p| {
        if let Some(c) = p.checkpoint {
            if c.validation_loss < 1.0 && first_below.is_none() {
                first_below = Some(c.iteration);
            }
        }
        ControlFlow::Continue(())
    })?;
    let source = clip_audio(&clip);
    let sampled = sample(&trainer.model.inference(), &tanh_log_compress(&clip.renders[0].mel), SamplingMode::default(), 0)?;
    let free_run = octave_mean(&source, &sampled)?;
    let ceiling = mulaw_ceiling(&clip)?;
    let final_ce = report.checkpoints.last().map_or(f64::NAN, |c| c.validation_loss);
    let passed = mel2mel_ok && first_below.is_some() && free_run > 0.7;
    Ok(Verdict::new(
        passed,
        format!(
            "{mel2mel}; wavenet on clip {clip_seed}: cross-entropy {} (final {final_ce:.3}), free-running CQT correlation {free_run:.3} (mu-law alone {ceiling:.3})",
            first_below.map_or("never below 1.0".to_string(), |it| format!("below 1.0 at iteration {it}")),
        ),
    ))
}

fn clip_audio(clip: &Corpus) -> AudioBuffer {
    render(&clip.tracks[0].notes, &builtin_patch_bank()[OVERFIT_PATCH], clip.renders[0].codes.len())
}

fn octave_mean(source: &AudioBuffer, other: &AudioBuffer) -> Result<f64> {
    let curve = CorrelationCurve {
        stage: DegradationStage::Original,
        instrument: None,
        tracks: 1,
        bins: bin_correlations(source, other)?,
    };
    Ok(curve.mean())
}

fn mulaw_ceiling(clip: &Corpus) -> Result<f64> {
    let decoded = AudioBuffer::new(clip.renders[0].codes.iter().map(|&c| mulaw_decode(c)).collect());
    octave_mean(&clip_audio(clip), &decoded)
}

/// First generated one-second clip with several notes whose mu-law round
/// trip alone scores at least `MIN_CLIP_CEILING`.
fn overfit_clip() -> Result<(u64, Corpus)> {
    for seed in 0..100 {
        let clip = tiny_corpus(1, 1.0, &[OVERFIT_PATCH], seed);
        if clip.tracks[0].notes.len() >= 2 && mulaw_ceiling(&clip)? >= MIN_CLIP_CEILING {
            return Ok((seed, clip));
        }
    }
    anyhow::bail!("no candidate clip clears the mu-law ceiling")
}

fn ablation(ws: &mut Workspace) -> Result<Verdict> {
    let (_, corpus) = ws.desk_corpus()?;
    let base = TrainConfig::desk(TrainTarget::Mel2mel);
    let variants = [
        Variant::Proposed,
        Variant::FrameOnly,
        Variant::OnsetOnly,
        Variant::Film1Only,
        Variant::Film2Only,
    ];
    let table = run_ablation_suite(&base, &variants, &ABLATION_SEEDS, corpus, |_, _, _| {});
    for row in &table.rows {
        if let Err(e) = &row.runs {
            anyhow::bail!("{} failed: {e}", row.variant.label());
        }
    }
    let passed = table.trends.len() == 3 && table.trends.iter().all(|t| t.passed);
    let detail: Vec<String> = table.trends.iter().map(|t| t.describe()).collect();
    Ok(Verdict::new(passed, detail.join("; ")))
}

fn converged(report: &RunReport) -> bool {
    let finite = report.train_losses.iter().all(|l| l.is_finite())
        && report.checkpoints.iter().all(|c| c.validation_loss.is_finite());
    let last = report.checkpoints.last().map_or(f64::INFINITY, |c| c.train_loss);
    finite && last < report.initial_loss()
}

fn losses(ws: &mut Workspace) -> Result<Verdict> {
    let (data, corpus) = ws.desk_corpus()?;
    let data = data.clone();
    let mut models = Vec::new();
    let mut stable = Vec::new();
    for kind in LossKind::ALL {
        let config = TrainConfig {
            loss: kind,
            ..TrainConfig::desk(TrainTarget::Mel2mel)
        };
        let mut trainer = Trainer::<Mel2Mel>::new(config, corpus)?;
        let report = trainer.run(kind.name(), |_| ControlFlow::Continue(()))?;
        stable.push((kind, converged(&report)));
        models.push((kind, trainer.model));
    }
    let config = TrainConfig {
        iterations: ACCEPTANCE_WAVENET_ITERATIONS,
        validation_every: ACCEPTANCE_WAVENET_ITERATIONS / 4,
        ..TrainConfig::desk(TrainTarget::Wavenet)
    };
    let mut trainer = Trainer::<WaveNet>::new(config, corpus)?;
    let wavenet_report = trainer.run("wavenet", |_| ControlFlow::Continue(()))?;
    let wavenet = trainer.model;

    let tracks = eval_tracks(&data, 1, 2.0)?;
    let weights = wavenet.inference();
    let refs: Vec<(LossKind, &Mel2Mel)> = models.iter().map(|(k, m)| (*k, m)).collect();
    let eval = EvalModels {
        wavenet: Some(&weights),
        mel2mel: &refs,
        sampling: SamplingMode::default(),
        seed: 0,
    };
    let curves = degradation_curves(&tracks, &DegradationStage::all(), &eval)?;
    let finite = curves.iter().all(|c| c.bins.iter().all(|b| b.is_finite()));
    let mean = |stage| {
        curves
            .iter()
            .find(|c| c.stage == stage && c.instrument.is_none())
            .map_or(f64::NAN, CorrelationCurve::mean)
    };
    let original = mean(DegradationStage::Original);
    let mulaw = mean(DegradationStage::MulawRoundtrip);
    let ground_truth = mean(DegradationStage::WavenetGroundTruthMel);
    let predicted: Vec<String> = LossKind::ALL
        .iter()
        .map(|&k| format!("{} {:.3}", k.name(), mean(DegradationStage::WavenetPredictedMel(k))))
        .collect();
    let all_stable = stable.iter().all(|(_, s)| *s) && converged(&wavenet_report);
    let ordered = original >= mulaw && mulaw >= ground_truth;

    ws.desk_mel2mel = models.into_iter().find(|(k, _)| *k == LossKind::TanhLogAbsMse).map(|(_, m)| m);
    ws.desk_wavenet = Some(wavenet);
    let unstable: Vec<&str> = stable.iter().filter(|(_, s)| !s).map(|(k, _)| k.name()).collect();
    Ok(Verdict::new(
        all_stable && finite && ordered,
        format!(
            "losses converged {} (unstable: {unstable:?}); curves finite {finite}; original {original:.3} >= mulaw {mulaw:.3} >= wavenet ground-truth mel {ground_truth:.3}: {ordered}; predicted mel {}",
            all_stable,
            predicted.join(", ")
        ),
    ))
}

fn grid(ws: &mut Workspace) -> Result<Verdict> {
    let model = ws.desk_mel2mel.as_ref().context("needs the desk model from the loss criterion")?;
    let probe = probe_input();
    let first = embedding_grid(model, GRID_RESOLUTION, &probe)?;
    let second = embedding_grid(model, GRID_RESOLUTION, &probe)?;
    let finite = first
        .centroid
        .as_slice()
        .iter()
        .chain(first.energy.as_slice())
        .all(|v| v.is_finite());
    let deterministic = first == second;
    let mut closest = f64::INFINITY;
    for (i, a) in first.instruments.iter().enumerate() {
        for b in &first.instruments[i + 1..] {
            let dr = a.pixel.0 as f64 - b.pixel.0 as f64;
            let dc = a.pixel.1 as f64 - b.pixel.1 as f64;
            closest = closest.min(dr.hypot(dc));
        }
    }
    Ok(Verdict::new(
        finite && deterministic && first.instruments.len() == 10 && closest >= MIN_PIXEL_SEPARATION,
        format!(
            "{GRID_RESOLUTION}x{GRID_RESOLUTION} finite {finite}, deterministic {deterministic}, {} instruments, closest pair {closest:.1} px",
            first.instruments.len()
        ),
    ))
}

fn write_checkpoints(ws: &Workspace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mel2mel = match &ws.desk_mel2mel {
        Some(m) => m.clone(),
        None => Mel2Mel::new(Mel2MelConfig::full(10, 2), 0)?,
    };
    let wavenet = match &ws.desk_wavenet {
        Some(w) => w.clone(),
        None => live_wavenet(WaveNetConfig::desk(), 0)?,
    };
    save_checkpoint(dir.join(MEL2MEL_CHECKPOINT), &mel2mel.to_checkpoint())?;
    save_checkpoint(dir.join(WAVENET_CHECKPOINT), &wavenet.to_checkpoint())?;
    let names: String = builtin_patch_bank().iter().map(|p| format!("{}\n", p.name)).collect();
    std::fs::write(dir.join(INSTRUMENT_NAMES), names)?;
    Ok(())
}

fn end_to_end(ws: &mut Workspace) -> Result<Verdict> {
    let dir = ws.root.path().join("checkpoints");
    write_checkpoints(ws, &dir)?;
    let midi = dir.join("phrase.mid");
    let notes = [NoteEvent::new(60, 100, 0.0, 0.25), NoteEvent::new(67, 80, 0.25, 0.5)];
    std::fs::write(&midi, SmfWriter::from_notes(&notes, 120.0, 480).to_bytes())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("run{run}.wav"));
        let status = Command::new(env!("CARGO_BIN_EXE_melsynth"))
            .args(["synth", "--checkpoints"])
            .arg(&dir)
            .arg("--midi")
            .arg(&midi)
            .args(["--instrument", "3", "--vocoder", "wavenet", "--seed", "42", "--out"])
            .arg(&out)
            .output()?;
        ensure!(status.status.success(), "synth failed: {}", String::from_utf8_lossy(&status.stderr));
        outputs.push(std::fs::read(&out)?);
    }
    let identical = outputs[0] == outputs[1];
    Ok(Verdict::new(
        identical && !outputs[0].is_empty(),
        format!("two seeded WaveNet renders of {} bytes identical: {identical}", outputs[0].len()),
    ))
}

type Criterion = fn(&mut Workspace) -> Result<Verdict>;

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("gradient correctness", gradient_checks),
        ("dsp oracles", dsp_oracles),
        ("wavenet sampler equivalence", sampler_equivalence),
        ("receptive field", receptive_field),
        ("overfit memorization", overfit),
        ("ablation trend", ablation),
        ("loss-function behavior", losses),
        ("embedding grid", grid),
        ("end-to-end determinism", end_to_end),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut ws = Workspace {
        root: tempfile::tempdir().expect("temporary directory"),
        corpus: None,
        desk_mel2mel: None,
        desk_wavenet: None,
    };
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = run(&mut ws).unwrap_or_else(|e| Verdict::new(false, format!("error: {e:#}")));
        let secs = start.elapsed().as_secs_f64();
        failed += usize::from(!verdict.passed);
        println!(
            "{} {name}: {} ({secs:.0} s)",
            if verdict.passed { "PASS" } else { "FAIL" },
            verdict.detail
        );
    }
    println!("acceptance: {failed} criteria failed");
}
