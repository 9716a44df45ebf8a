use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dsp::{stft_mag, AudioBuffer, HOP, SAMPLE_RATE, WINDOW};
use crate::midi::NoteEvent;

fn one_partial() -> InstrumentPatch {
    InstrumentPatch {
        name: "sine".into(),
        harmonics: vec![(1, 1.0)],
        attack: 0.01,
        decay_rate: 0.0,
        sustain: 1.0,
        release: 0.05,
        rolloff_db_per_octave: 0.0,
    }
}

fn patch_named(name: &str) -> InstrumentPatch {
    builtin_patch_bank().into_iter().find(|p| p.name == name).unwrap()
}

fn probe_len() -> usize {
    (PROBE_SECONDS * f64::from(SAMPLE_RATE)) as usize
}

#[test]
fn middle_c_peaks_at_equal_temperament_frequency() {
    let audio = render(&[NoteEvent::new(60, 100, 0.0, 1.0)], &one_partial(), 16_000);
    let mag = stft_mag(&audio, WINDOW, HOP).unwrap();
    let frame = 60;
    let peak = (0..mag.rows()).max_by(|&a, &b| mag.get(a, frame).total_cmp(&mag.get(b, frame))).unwrap();
    let expected = 440.0 * 2f64.powf(-9.0 / 12.0);
    assert!((expected - 261.6256).abs() < 1e-3);
    let bin_hz = f64::from(SAMPLE_RATE) / WINDOW as f64;
    assert_eq!(peak, (expected / bin_hz).round() as usize);
}

#[test]
fn empty_note_list_renders_silence() {
    let audio = render(&[], &one_partial(), 777);
    assert_eq!(audio.len(), 777);
    assert!(audio.samples.iter().all(|&x| x == 0.0));
}

#[test]
fn velocity_scales_amplitude_linearly() {
    let soft = render_unnormalized(&[NoteEvent::new(64, 40, 0.1, 0.6)], &patch_named("brass"), 12_000);
    let loud = render_unnormalized(&[NoteEvent::new(64, 80, 0.1, 0.6)], &patch_named("brass"), 12_000);
    for (a, b) in soft.samples.iter().zip(&loud.samples) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn tracks_are_peak_normalized() {
    let notes = [NoteEvent::new(60, 90, 0.0, 0.5), NoteEvent::new(64, 70, 0.2, 0.9)];
    let audio = render(&notes, &patch_named("piano"), 16_000);
    assert!((audio.peak() - TRACK_PEAK).abs() < 1e-12);
}

#[test]
fn bank_covers_both_timbre_axes() {
    let bank = builtin_patch_bank();
    assert_eq!(bank.len(), 10);
    assert!(bank.iter().all(InstrumentPatch::is_valid));
    let stats = patch_probe_stats(&bank).unwrap();
    let get = |name: &str| stats.iter().find(|s| s.0 == name).unwrap();
    assert!(get("organ").2 - get("pluck").2 >= 10.0, "{stats:?}");
    assert!(get("saw lead").1 > get("flute").1, "{stats:?}");
}

/// Envelope integral of the probe note, independent of the renderer.
fn envelope_energy_oracle(patch: &InstrumentPatch) -> f64 {
    let sr = f64::from(SAMPLE_RATE);
    (0..probe_len()).map(|n| patch.envelope(n as f64 / sr, 1.0).powi(2)).sum::<f64>()
}

#[test]
fn pluck_envelope_energy_far_below_organ() {
    let ratio = envelope_energy_oracle(&patch_named("pluck")) / envelope_energy_oracle(&patch_named("organ"));
    assert!(10.0 * ratio.log10() < -10.0);
}

#[test]
fn patches_are_pairwise_separable() {
    let stats = patch_probe_stats(&builtin_patch_bank()).unwrap();
    for (i, a) in stats.iter().enumerate() {
        for b in &stats[i + 1..] {
            let centroid_gap = (a.1 - b.1).abs() / a.1.max(b.1);
            let energy_gap = (a.2 - b.2).abs();
            assert!(centroid_gap > 0.03 || energy_gap > 1.0, "{} vs {}: {stats:?}", a.0, b.0);
        }
    }
}

#[test]
fn onsets_align_with_mel_energy_rise() {
    for onset in [0.25, 0.5037, 0.7771] {
        let audio = render(&[NoteEvent::new(67, 100, onset, onset + 0.6)], &patch_named("organ"), 24_000);
        let mel = crate::dsp::mel_spectrogram(&audio).unwrap();
        let energy: Vec<f64> = (0..mel.frames()).map(|t| mel.values.column(t).iter().sum()).collect();
        let steady = energy[((onset + 0.3) * 125.0) as usize];
        let rise = energy.iter().position(|&e| e >= 0.5 * steady).unwrap() as f64;
        let expected = onset * f64::from(SAMPLE_RATE) / HOP as f64;
        assert!((rise - expected).abs() <= 1.0, "onset {onset}: rise {rise} expected {expected}");
    }
}

#[test]
fn examples_share_the_frame_grid() {
    let notes = vec![NoteEvent::new(60, 100, 0.1, 0.4)];
    let audio = render(&notes, &patch_named("flute"), 8_000 + 50);
    let mut corpus = Corpus::new();
    let track = corpus.add_track("t", notes, audio.len() / HOP, Split::Train);
    let r = corpus.add_render(track, 3, &audio, None).unwrap();
    assert_eq!(corpus.renders[r].frames(), 62);
    let ex = corpus.example(r, 2 * HOP, 40 * HOP).unwrap();
    assert_eq!((ex.input.rows(), ex.input.cols()), (176, 40));
    assert_eq!(ex.mel.frames(), 40);
    assert_eq!(ex.codes.len(), 40 * HOP);
    assert_eq!(ex.instrument, 3);
    assert!(matches!(corpus.example(r, 5, HOP), Err(DataError::Misaligned { .. })));
    assert!(matches!(corpus.example(r, 0, 100), Err(DataError::Misaligned { .. })));
    assert!(matches!(corpus.example(r, 30 * HOP, 40 * HOP), Err(DataError::OutOfRange { .. })));
}

#[test]
fn context_before_the_render_is_silence() {
    let notes = vec![NoteEvent::new(60, 100, 0.0, 0.4)];
    let audio = render(&notes, &patch_named("organ"), 40 * HOP);
    let mut corpus = Corpus::new();
    let track = corpus.add_track("t", notes, 40, Split::Train);
    let r = corpus.add_render(track, 0, &audio, None).unwrap();
    let inside = corpus.example_with_context(r, 10 * HOP, 8 * HOP, 4 * HOP).unwrap();
    let plain = corpus.example(r, 6 * HOP, 12 * HOP).unwrap();
    assert_eq!(inside.codes, plain.codes);
    assert_eq!(inside.mel.values, plain.mel.values);
    assert_eq!(inside.offset, 10 * HOP);

    let edge = corpus.example_with_context(r, HOP, 8 * HOP, 4 * HOP).unwrap();
    assert_eq!(edge.codes.len(), 12 * HOP);
    assert!(edge.codes[..3 * HOP].iter().all(|&c| c == crate::dsp::MULAW_SILENCE));
    assert_eq!(edge.codes[3 * HOP..], corpus.renders[r].codes[..9 * HOP]);
    assert!(edge.mel.values.slice_cols(0, 3).as_slice().iter().all(|&v| v == crate::dsp::MEL_FLOOR));
    assert!(edge.input.slice_cols(0, 3).as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(edge.input.slice_cols(3, 9), corpus.tracks[track].input.slice_cols(0, 9));
    assert!(matches!(corpus.example_with_context(r, 0, HOP, 5), Err(DataError::Misaligned { .. })));
}

#[test]
fn reference_length_gives_512_frames() {
    let mut corpus = Corpus::new();
    let track = corpus.add_track("long", vec![NoteEvent::new(60, 90, 0.5, 2.0)], 600, Split::Train);
    let audio = render(&corpus.tracks[track].notes.clone(), &patch_named("organ"), 600 * HOP);
    let r = corpus.add_render(track, 0, &audio, None).unwrap();
    let ex = corpus.example(r, 0, 65_536).unwrap();
    assert_eq!(ex.input.cols(), 65_536 / 128);
    assert_eq!(ex.mel.frames(), 512);
}

#[test]
fn silent_slice_has_floor_target() {
    let mut corpus = Corpus::new();
    let track = corpus.add_track("quiet", Vec::new(), 64, Split::Train);
    let r = corpus.add_render(track, 0, &AudioBuffer::silence(64 * HOP), None).unwrap();
    let ex = corpus.example(r, 0, 32 * HOP).unwrap();
    assert!(ex.mel.values.as_slice().iter().all(|&v| v == crate::dsp::MEL_FLOOR));
}

#[test]
fn generated_tracks_are_valid_and_varied() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let notes = generate_track(&mut rng, 20.0);
    assert!(notes.len() > 20);
    assert!(notes.iter().all(|n| n.is_valid() && n.offset <= 20.0));
    let pitches: HashSet<u8> = notes.iter().map(|n| n.pitch).collect();
    assert!(pitches.len() > 4);
    let legato_repeats = notes
        .windows(2)
        .filter(|w| w[0].pitch == w[1].pitch && (w[0].offset - w[1].onset).abs() < 1e-9)
        .count();
    assert!(legato_repeats > 0);
}

#[test]
fn corpus_layout_split_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = CorpusConfig {
        n_tracks: 10,
        seed: 3,
        track_seconds: 2.0,
    };
    let a = generate_corpus(&config, dir.path().join("a")).unwrap();
    let b = generate_corpus(&config, dir.path().join("b")).unwrap();
    assert_eq!(a.entries.len(), 100);
    assert_eq!(a.entries, b.entries);
    for e in &a.entries {
        assert_eq!(std::fs::read(a.resolve(&e.audio)).unwrap(), std::fs::read(b.resolve(&e.audio)).unwrap());
        assert_eq!(std::fs::read(a.resolve(&e.midi)).unwrap(), std::fs::read(b.resolve(&e.midi)).unwrap());
    }
    let train: HashSet<_> = a.split(Split::Train).map(|e| e.midi.clone()).collect();
    let val: HashSet<_> = a.split(Split::Validation).map(|e| e.midi.clone()).collect();
    assert!(train.is_disjoint(&val));
    assert_eq!(val.len(), validation_count(10));
    let reloaded = DatasetManifest::load(dir.path().join("a").join(MANIFEST_FILE)).unwrap();
    assert_eq!(reloaded, a);
    assert_eq!(reloaded.instruments(), 10);
    let corpus = Corpus::load(&reloaded).unwrap();
    assert_eq!(corpus.tracks.len(), 10);
    assert_eq!(corpus.renders.len(), 100);
    assert!(corpus.renders.iter().all(|r| r.frames() == 250));
    assert_eq!(corpus.instruments(), 10);
}

#[test]
fn corpus_rejects_single_track() {
    let dir = tempfile::tempdir().unwrap();
    let config = CorpusConfig {
        n_tracks: 1,
        seed: 0,
        track_seconds: 1.0,
    };
    assert!(matches!(generate_corpus(&config, dir.path()), Err(DataError::TooFewTracks(1))));
}

#[test]
fn validation_ratio_matches_reference_split() {
    assert_eq!(validation_count(334), 14);
    assert_eq!(validation_count(2), 1);
    assert_eq!(validation_count(24), 1);
    assert_eq!(validation_count(50), 2);
}

#[test]
fn manifest_parse_errors_name_the_line() {
    let err = DatasetManifest::parse("# seed 1\n# patch_bank 1\nmidi/a.mid\t0\taudio/a.wav\n", ".").unwrap_err();
    assert!(matches!(err, DataError::Manifest { line: 3, .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rendering_is_deterministic(pitch in 40u8..90, velocity in 1u8..=127, onset in 0.0f64..0.3, held in 0.01f64..0.4, which in 0usize..10) {
        let patch = &builtin_patch_bank()[which];
        let notes = [NoteEvent::new(pitch, velocity, onset, onset + held)];
        let a = render(&notes, patch, 12_000);
        let b = render(&notes, patch, 12_000);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn envelope_stays_in_unit_range(which in 0usize..10, t in 0.0f64..3.0, held in 0.0f64..2.0) {
        let e = builtin_patch_bank()[which].envelope(t, held);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&e));
    }
}
