//! Autoregressive sampling engines.
//!
//! Both engines evaluate every layer position with the same scalar routines in
//! the same order, so the cached engine reproduces the naive one bit for bit.
//! The cached engine keeps, per layer, a ring buffer of the last `dilation`
//! layer inputs and does O(layers) work per sample. The naive engine recomputes
//! the whole residual stack over the receptive field for every sample.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{WaveNet, WaveNetConfig, WaveNetError};
use crate::autograd::{gemm, sigmoid, ParamId};
use crate::dsp::{mulaw_decode, tanh_log_compress, AudioBuffer, MelSpectrogram, HOP, MULAW_SILENCE, N_MELS};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Categorical draw from `softmax(logits / temperature)`.
    Temperature(f64),
    /// Most likely code; ignores the random stream.
    Argmax,
}

impl Default for SamplingMode {
    fn default() -> Self {
        SamplingMode::Temperature(1.0)
    }
}

struct Dense {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn from(model: &WaveNet, w: ParamId, b: Option<ParamId>) -> Self {
        let wm = &model.params.get(w).value;
        Self {
            rows: wm.rows(),
            cols: wm.cols(),
            w: wm.as_slice().to_vec(),
            b: b.map_or_else(|| vec![0.0; wm.rows()], |b| model.params.get(b).value.as_slice().to_vec()),
        }
    }

    /// `out = b + W x`, accumulated row by row left to right.
    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        matvec_acc(&self.w, self.cols, x, out);
    }
}

#[inline]
fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

struct LayerWeights {
    dilation: usize,
    w_past: Vec<f64>,
    w_now: Vec<f64>,
    skip: Dense,
    res: Option<Dense>,
}

/// Read-only parameter snapshot shared by any number of sampling streams.
pub struct InferenceWeights {
    model: WaveNet,
    residual: usize,
    embed: Vec<f64>,
    layers: Vec<LayerWeights>,
    post1: Dense,
    post2: Dense,
}

/// Per-layer conditioning contribution (projection plus gate bias) for every
/// sample position, stored position-major.
pub struct ConditioningProjection {
    len: usize,
    gate_width: usize,
    per_layer: Vec<Vec<f64>>,
}

impl ConditioningProjection {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn at(&self, layer: usize, t: usize) -> &[f64] {
        &self.per_layer[layer][t * self.gate_width..(t + 1) * self.gate_width]
    }
}

struct Scratch {
    a: Vec<f64>,
    z: Vec<f64>,
    skip_tmp: Vec<f64>,
    skip: Vec<f64>,
    next: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
}

impl InferenceWeights {
    pub fn from_model(model: &WaveNet) -> Self {
        let r = model.config.residual_channels;
        let layers = model
            .ids
            .layers
            .iter()
            .zip(&model.config.dilations)
            .map(|(ids, &dilation)| {
                let conv = model.params.get(ids.conv_w).value.as_slice();
                let half = conv.len() / 2;
                LayerWeights {
                    dilation,
                    w_past: conv[..half].to_vec(),
                    w_now: conv[half..].to_vec(),
                    skip: Dense::from(model, ids.skip_w, Some(ids.skip_b)),
                    res: ids.res.map(|(w, b)| Dense::from(model, w, Some(b))),
                }
            })
            .collect();
        Self {
            model: model.clone(),
            residual: r,
            embed: model.params.get(model.ids.embed).value.as_slice().to_vec(),
            layers,
            post1: Dense::from(model, model.ids.post1.0, Some(model.ids.post1.1)),
            post2: Dense::from(model, model.ids.post2.0, Some(model.ids.post2.1)),
        }
    }

    pub fn config(&self) -> &WaveNetConfig {
        &self.model.config
    }

    /// Projects per-sample conditioning `C_cond x N` into every layer's gates.
    pub fn project(&self, cond: &Matrix) -> ConditioningProjection {
        let gate_width = 2 * self.residual;
        let n = cond.cols();
        let per_layer = self
            .model
            .ids
            .layers
            .iter()
            .map(|ids| {
                let w = &self.model.params.get(ids.cond_w).value;
                let b = self.model.params.get(ids.conv_b).value.as_slice();
                // Position-major product: out[t, j] = sum_c cond[c, t] w[j, c].
                let mut out = vec![0.0; n * gate_width];
                gemm(n, w.cols(), gate_width, cond.as_slice(), true, w.as_slice(), true, &mut out, false);
                for row in out.chunks_exact_mut(gate_width) {
                    for (v, &bias) in row.iter_mut().zip(b) {
                        *v += bias;
                    }
                }
                out
            })
            .collect();
        ConditioningProjection {
            len: n,
            gate_width,
            per_layer,
        }
    }

    /// Upsamples compressed Mel frames and projects them.
    pub fn project_mel(&self, mel: &Matrix) -> Result<ConditioningProjection, WaveNetError> {
        if mel.rows() != N_MELS {
            return Err(WaveNetError::MelRows { got: mel.rows() });
        }
        if mel.cols() == 0 {
            return Ok(ConditioningProjection {
                len: 0,
                gate_width: 2 * self.residual,
                per_layer: vec![Vec::new(); self.layers.len()],
            });
        }
        Ok(self.project(&self.model.upsample(mel)?))
    }

    fn scratch(&self) -> Scratch {
        let r = self.residual;
        let s = self.post1.rows;
        Scratch {
            a: vec![0.0; 2 * r],
            z: vec![0.0; r],
            skip_tmp: vec![0.0; s],
            skip: vec![0.0; s],
            next: vec![0.0; r],
            h1: vec![0.0; s],
            h2: vec![0.0; s],
            logits: vec![0.0; self.post2.rows],
        }
    }

    fn embed_code(&self, code: u8, out: &mut [f64]) {
        let r = self.residual;
        let c = usize::from(code);
        out.copy_from_slice(&self.embed[c * r..(c + 1) * r]);
    }

    /// One layer at one position: gate from the past and current inputs, then
    /// optionally the skip contribution and the next layer's input.
    #[inline]
    fn layer_step(&self, l: usize, x_past: &[f64], x_now: &[f64], cond: &[f64], s: &mut Scratch, with_skip: bool) {
        let lw = &self.layers[l];
        let r = self.residual;
        s.a.copy_from_slice(cond);
        matvec_acc(&lw.w_past, r, x_past, &mut s.a);
        matvec_acc(&lw.w_now, r, x_now, &mut s.a);
        for i in 0..r {
            s.z[i] = s.a[i].tanh() * sigmoid(s.a[r + i]);
        }
        if with_skip {
            lw.skip.apply(&s.z, &mut s.skip_tmp);
            for (acc, &v) in s.skip.iter_mut().zip(&s.skip_tmp) {
                *acc += v;
            }
        }
        if let Some(res) = &lw.res {
            res.apply(&s.z, &mut s.next);
            for (n, &x) in s.next.iter_mut().zip(x_now) {
                *n += x;
            }
        }
    }

    fn output(&self, s: &mut Scratch) {
        for (h, &v) in s.h1.iter_mut().zip(&s.skip) {
            *h = v.max(0.0);
        }
        self.post1.apply(&s.h1, &mut s.h2);
        for v in s.h2.iter_mut() {
            *v = v.max(0.0);
        }
        self.post2.apply(&s.h2, &mut s.logits);
    }
}

fn choose(logits: &[f64], mode: SamplingMode, rng: &mut ChaCha8Rng) -> u8 {
    match mode {
        SamplingMode::Argmax => {
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            best as u8
        }
        SamplingMode::Temperature(temp) => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut weights = [0.0f64; 256];
            let mut total = 0.0;
            for (w, &v) in weights.iter_mut().zip(logits) {
                *w = ((v - max) / temp).exp();
                total += *w;
            }
            let target = rng.gen::<f64>() * total;
            let mut cum = 0.0;
            for (i, &w) in weights.iter().enumerate().take(logits.len()) {
                cum += w;
                if cum > target {
                    return i as u8;
                }
            }
            (logits.len() - 1) as u8
        }
    }
}

/// Softmax of `logits / temperature` with the maximum shifted out.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Incremental state for one sampling stream.
pub struct SamplerState {
    buffers: Vec<Vec<f64>>,
    position: usize,
    previous: u8,
    rng: ChaCha8Rng,
    scratch: Scratch,
    x: Vec<f64>,
}

impl SamplerState {
    pub fn new(weights: &InferenceWeights, seed: u64) -> Self {
        Self {
            buffers: weights
                .layers
                .iter()
                .map(|l| vec![0.0; l.dilation * weights.residual])
                .collect(),
            position: 0,
            previous: MULAW_SILENCE,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scratch: weights.scratch(),
            x: vec![0.0; weights.residual],
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Ring buffer lengths in samples, one per layer.
    pub fn buffer_lengths(&self, weights: &InferenceWeights) -> Vec<usize> {
        self.buffers.iter().map(|b| b.len() / weights.residual).collect()
    }

    fn logits_at(&mut self, weights: &InferenceWeights, proj: &ConditioningProjection, mut layer_time: Option<&mut [f64]>) {
        let t = self.position;
        let r = weights.residual;
        weights.embed_code(self.previous, &mut self.x);
        self.scratch.skip.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..weights.layers.len() {
            let start = layer_time.as_ref().map(|_| Instant::now());
            let slot = (t % weights.layers[l].dilation) * r;
            let buf = &mut self.buffers[l];
            weights.layer_step(l, &buf[slot..slot + r], &self.x, proj.at(l, t), &mut self.scratch, true);
            buf[slot..slot + r].copy_from_slice(&self.x);
            if weights.layers[l].res.is_some() {
                std::mem::swap(&mut self.x, &mut self.scratch.next);
            }
            if let (Some(times), Some(start)) = (layer_time.as_deref_mut(), start) {
                times[l] += start.elapsed().as_secs_f64();
            }
        }
        weights.output(&mut self.scratch);
    }

    /// Advances past a known code without sampling.
    pub fn force(&mut self, weights: &InferenceWeights, proj: &ConditioningProjection, code: u8) {
        self.logits_at(weights, proj, None);
        self.previous = code;
        self.position += 1;
    }

    /// Generates the next code.
    pub fn step(&mut self, weights: &InferenceWeights, proj: &ConditioningProjection, mode: SamplingMode) -> u8 {
        self.logits_at(weights, proj, None);
        let code = choose(&self.scratch.logits, mode, &mut self.rng);
        self.previous = code;
        self.position += 1;
        code
    }
}

/// Cached-engine logits under teacher forcing, one vector per position.
#[cfg(test)]
pub(super) fn forced_logits(weights: &InferenceWeights, proj: &ConditioningProjection, codes: &[u8]) -> Vec<Vec<f64>> {
    let mut state = SamplerState::new(weights, 0);
    codes
        .iter()
        .map(|&code| {
            state.logits_at(weights, proj, None);
            state.previous = code;
            state.position += 1;
            state.scratch.logits.clone()
        })
        .collect()
}

/// Cached-engine codes for every position of `proj`.
pub fn sample_codes_cached(weights: &InferenceWeights, proj: &ConditioningProjection, mode: SamplingMode, seed: u64) -> Vec<u8> {
    let mut state = SamplerState::new(weights, seed);
    (0..proj.len()).map(|_| state.step(weights, proj, mode)).collect()
}

/// Logits at position `t` recomputed from scratch over the receptive field.
fn naive_logits(weights: &InferenceWeights, proj: &ConditioningProjection, history: &[u8], t: usize, s: &mut Scratch) {
    let r = weights.residual;
    let field = weights.config().receptive_field();
    let lo = (t + 1).saturating_sub(field);
    let n = t + 1 - lo;
    let mut xs = vec![0.0; n * r];
    for (i, x) in xs.chunks_exact_mut(r).enumerate() {
        let p = lo + i;
        let code = if p == 0 { MULAW_SILENCE } else { history[p - 1] };
        weights.embed_code(code, x);
    }
    let zero = vec![0.0; r];
    let mut next = vec![0.0; n * r];
    s.skip.iter_mut().for_each(|v| *v = 0.0);
    for (l, lw) in weights.layers.iter().enumerate() {
        for i in 0..n {
            let p = lo + i;
            // Positions before the window are outside the dependency cone of t.
            let past = if i >= lw.dilation { &xs[(i - lw.dilation) * r..(i - lw.dilation + 1) * r] } else { &zero[..] };
            weights.layer_step(l, past, &xs[i * r..(i + 1) * r], proj.at(l, p), s, p == t);
            if lw.res.is_some() {
                next[i * r..(i + 1) * r].copy_from_slice(&s.next);
            }
        }
        if lw.res.is_some() {
            std::mem::swap(&mut xs, &mut next);
        }
    }
    weights.output(s);
}

/// Naive-engine codes: every sample re-runs the stack over its receptive field.
pub fn sample_codes_naive(weights: &InferenceWeights, proj: &ConditioningProjection, mode: SamplingMode, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = weights.scratch();
    let mut codes = Vec::with_capacity(proj.len());
    for t in 0..proj.len() {
        naive_logits(weights, proj, &codes, t, &mut s);
        let code = choose(&s.logits, mode, &mut rng);
        codes.push(code);
    }
    codes
}

/// Renders `T * 128` samples for `80 x T` compressed Mel frames, after a
/// teacher-forced run-in over silence as seen in training.
pub fn sample(weights: &InferenceWeights, mel: &Matrix, mode: SamplingMode, seed: u64) -> Result<AudioBuffer, WaveNetError> {
    if let SamplingMode::Temperature(t) = mode {
        if !(t > 0.0 && t.is_finite()) {
            return Err(WaveNetError::Config(format!("temperature must be positive, got {t}")));
        }
    }
    if mel.rows() != N_MELS {
        return Err(WaveNetError::MelRows { got: mel.rows() });
    }
    let context = weights.config().context_samples();
    let silence = tanh_log_compress(&MelSpectrogram::from_linear(Matrix::zeros(N_MELS, context / HOP)));
    let proj = weights.project_mel(&Matrix::hstack(&[&silence, mel]))?;
    let mut state = SamplerState::new(weights, seed);
    for _ in 0..context {
        state.force(weights, &proj, MULAW_SILENCE);
    }
    let samples = (context..proj.len()).map(|_| mulaw_decode(state.step(weights, &proj, mode))).collect();
    Ok(AudioBuffer::new(samples))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub receptive_field: usize,
    pub cached_samples: usize,
    pub cached_samples_per_second: f64,
    pub naive_samples: usize,
    pub naive_samples_per_second: f64,
    /// Cached throughput divided by naive throughput.
    pub speedup: f64,
    /// Mean cached-engine seconds per sample spent in each layer.
    pub per_layer_seconds: Vec<f64>,
}

impl BenchReport {
    pub fn is_empty(&self) -> bool {
        self.cached_samples == 0
    }
}

/// Upper bound on naive-engine samples timed per benchmark.
const NAIVE_STEPS: usize = 4;

/// Times both engines on a randomly initialized model of `config`.
///
/// The cached engine is timed over `duration_samples` after warming up for one
/// receptive field; the naive engine over a few samples at positions past the
/// receptive field, where its per-sample cost is at steady state.
pub fn bench_sampler(config: &WaveNetConfig, duration_samples: usize) -> Result<BenchReport, WaveNetError> {
    if duration_samples == 0 {
        return Ok(BenchReport::default());
    }
    let mut model = WaveNet::new(config.clone(), 0xbe_c4)?;
    // Random output weights so the sampled sequence is not constant.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for id in [model.ids.post2.0, model.ids.post2.1] {
        let p = model.params.get_mut(id);
        p.value.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    let weights = InferenceWeights::from_model(&model);
    let field = config.receptive_field();
    let naive_steps = duration_samples.min(NAIVE_STEPS);
    let total = field + duration_samples.max(naive_steps);
    let cond = Matrix::from_fn(config.cond_channels, total, |_, _| rng.gen_range(-1.0..1.0));
    let proj = weights.project(&cond);
    let mode = SamplingMode::Temperature(1.0);

    let mut state = SamplerState::new(&weights, 1);
    let mut history = Vec::with_capacity(total);
    for _ in 0..field {
        history.push(state.step(&weights, &proj, mode));
    }
    let start = Instant::now();
    for _ in 0..duration_samples {
        history.push(state.step(&weights, &proj, mode));
    }
    let cached_secs = start.elapsed().as_secs_f64().max(1e-12);

    let mut per_layer = vec![0.0; config.layers()];
    let mut probe = SamplerState::new(&weights, 1);
    let probe_steps = duration_samples.min(2000);
    for _ in 0..probe_steps {
        probe.logits_at(&weights, &proj, Some(&mut per_layer));
        probe.previous = MULAW_SILENCE;
        probe.position += 1;
    }
    per_layer.iter_mut().for_each(|v| *v /= probe_steps as f64);

    let mut s = weights.scratch();
    let start = Instant::now();
    for t in field..field + naive_steps {
        naive_logits(&weights, &proj, &history, t, &mut s);
    }
    let naive_secs = start.elapsed().as_secs_f64().max(1e-12);

    let cached_rate = duration_samples as f64 / cached_secs;
    let naive_rate = naive_steps as f64 / naive_secs;
    Ok(BenchReport {
        receptive_field: field,
        cached_samples: duration_samples,
        cached_samples_per_second: cached_rate,
        naive_samples: naive_steps,
        naive_samples_per_second: naive_rate,
        speedup: cached_rate / naive_rate,
        per_layer_seconds: per_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 999.0, -1000.0], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        let logits: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin() * 30.0).collect();
        for temp in [0.1, 1.0, 3.0] {
            assert!((softmax(&logits, temp).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_ignores_seed() {
        let logits = [0.1, 2.0, 0.3, 2.0];
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(choose(&logits, SamplingMode::Argmax, &mut a), 1);
        assert_eq!(choose(&logits, SamplingMode::Argmax, &mut b), 1);
    }

    #[test]
    fn temperature_draws_follow_probabilities() {
        let logits = [0.0, (3.0f64).ln()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ones = (0..20_000)
            .filter(|_| choose(&logits, SamplingMode::Temperature(1.0), &mut rng) == 1)
            .count();
        let frac = ones as f64 / 20_000.0;
        assert!((frac - 0.75).abs() < 0.02, "{frac}");
    }
}
