use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, random_matrix};
use super::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn assert_passes(name: &str, inputs: &[Matrix], seed: u64, build: impl Fn(&mut Graph, &[Var]) -> Result<Var, AutogradError>) {
    let report = check(inputs, seed, build).unwrap();
    assert!(report.passed(), "{name} seed {seed}: {:?}", report.relative_errors);
}

#[test]
fn linear_identity_and_shape() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64));
    let w = g.leaf(Matrix::from_fn(3, 3, |r, c| f64::from(u8::from(r == c))));
    let b = g.leaf(Matrix::zeros(3, 1));
    let y = g.linear(w, x, b).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let x = g.leaf(Matrix::zeros(176, 10));
    let w = g.leaf(Matrix::zeros(256, 176));
    let b = g.leaf(Matrix::zeros(256, 1));
    let y = g.linear(w, x, b).unwrap();
    assert_eq!((g.value(y).rows(), g.value(y).cols()), (256, 10));

    let bad = g.leaf(Matrix::zeros(5, 1));
    assert!(matches!(g.linear(w, x, bad), Err(AutogradError::Shape { .. })));
    let bad_w = g.leaf(Matrix::zeros(4, 3));
    assert!(matches!(g.matmul(bad_w, x), Err(AutogradError::Shape { .. })));
}

#[test]
fn linear_gradients() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let inputs = [random_matrix(4, 6, 1.0, &mut r), random_matrix(3, 4, 1.0, &mut r), random_matrix(3, 1, 1.0, &mut r)];
        assert_passes("linear", &inputs, seed, |g, v| g.linear(v[1], v[0], v[2]));
    }
}

#[test]
fn film_identities() {
    let mut g = Graph::new();
    let f = g.leaf(Matrix::from_fn(3, 5, |r, c| r as f64 - c as f64 * 0.5));
    let ones = g.leaf(Matrix::filled(3, 1, 1.0));
    let zeros = g.leaf(Matrix::zeros(3, 1));
    let same = g.film(f, ones, zeros, 5).unwrap();
    assert_eq!(g.value(same), g.value(f));
    let beta = g.leaf(Matrix::from_vec(3, 1, vec![0.5, -1.0, 2.0]));
    let flat = g.film(f, zeros, beta, 5).unwrap();
    for c in 0..3 {
        assert!(g.value(flat).row(c).iter().all(|&v| v == g.value(beta).get(c, 0)));
    }
    let wrong = g.leaf(Matrix::zeros(2, 1));
    assert!(g.film(f, wrong, wrong, 5).is_err());
}

#[test]
fn film_gradients() {
    for seed in SEEDS {
        let mut r = rng(seed);
        // Two sequences of length 4, each with its own modulation column.
        let inputs = [random_matrix(3, 8, 1.0, &mut r), random_matrix(3, 2, 1.0, &mut r), random_matrix(3, 2, 1.0, &mut r)];
        assert_passes("film", &inputs, seed, |g, v| g.film(v[0], v[1], v[2], 4));
    }
}

fn lstm_inputs(seed: u64, input: usize, hidden: usize, cols: usize) -> Vec<Matrix> {
    let mut r = rng(seed);
    vec![
        random_matrix(input, cols, 1.0, &mut r),
        random_matrix(4 * hidden, input, 0.6, &mut r),
        random_matrix(4 * hidden, hidden, 0.6, &mut r),
        random_matrix(4 * hidden, 1, 0.6, &mut r),
    ]
}

#[test]
fn lstm_zero_everything_gives_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::zeros(3, 1));
    let wi = g.leaf(Matrix::zeros(8, 3));
    let wh = g.leaf(Matrix::zeros(8, 2));
    let b = g.leaf(Matrix::zeros(8, 1));
    let h = g.lstm(x, wi, wh, b, 1, false).unwrap();
    assert!(g.value(h).as_slice().iter().all(|&v| v == 0.0));
}

fn reverse_time(m: &Matrix, seq_len: usize) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (b, t) = (c / seq_len, c % seq_len);
        m.get(r, b * seq_len + seq_len - 1 - t)
    })
}

#[test]
fn backward_direction_is_time_reversed_forward() {
    let p = lstm_inputs(11, 3, 4, 10);
    let run = |x: Matrix, reverse: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = [x, p[1].clone(), p[2].clone(), p[3].clone()].into_iter().map(|m| g.leaf(m)).collect();
        let h = g.lstm(vars[0], vars[1], vars[2], vars[3], 5, reverse).unwrap();
        g.value(h).clone()
    };
    let bwd = run(p[0].clone(), true);
    let fwd_on_reversed = run(reverse_time(&p[0], 5), false);
    assert!(bwd.max_abs_diff(&reverse_time(&fwd_on_reversed, 5)) < 1e-15);
}

#[test]
fn lstm_gradients_both_directions() {
    for seed in SEEDS {
        // 4 steps, 3 channels; the second case batches two sequences.
        let single = lstm_inputs(seed, 3, 2, 4);
        assert_passes("lstm fwd", &single, seed, |g, v| g.lstm(v[0], v[1], v[2], v[3], 4, false));
        assert_passes("lstm bwd", &single, seed, |g, v| g.lstm(v[0], v[1], v[2], v[3], 4, true));
        let batched = lstm_inputs(seed + 100, 3, 2, 8);
        assert_passes("lstm batched", &batched, seed, |g, v| g.lstm(v[0], v[1], v[2], v[3], 4, false));
    }
}

fn bilstm(g: &mut Graph, v: &[Var], seq_len: usize) -> Result<Var, AutogradError> {
    let f = g.lstm(v[0], v[1], v[2], v[3], seq_len, false)?;
    let b = g.lstm(v[0], v[4], v[5], v[6], seq_len, true)?;
    g.concat_rows(&[f, b])
}

#[test]
fn bilstm_shape_and_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::filled(5, 3, 0.1));
    let wi = g.leaf(Matrix::filled(512, 5, 0.01));
    let wh = g.leaf(Matrix::filled(512, 128, 0.01));
    let b = g.leaf(Matrix::zeros(512, 1));
    let out = bilstm(&mut g, &[x, wi, wh, b, wi, wh, b], 3).unwrap();
    assert_eq!(g.value(out).rows(), 256);
    let fwd = g.lstm(x, wi, wh, b, 3, false).unwrap();
    assert_eq!(&g.value(out).slice_rows(0, 128), g.value(fwd));

    for seed in SEEDS {
        let mut inputs = lstm_inputs(seed, 3, 2, 4);
        inputs.extend(lstm_inputs(seed + 50, 3, 2, 4).into_iter().skip(1));
        assert_passes("bilstm", &inputs, seed, |g, v| bilstm(g, v, 4));
    }
}

#[test]
fn dilated_conv_support_and_causality() {
    let mut g = Graph::new();
    let mut impulse = Matrix::zeros(1, 12);
    impulse.set(0, 5, 1.0);
    let x = g.leaf(impulse);
    let w = g.leaf(Matrix::from_vec(2, 1, vec![2.0, 3.0]));
    let y = g.dilated_conv(x, w, 2, 12).unwrap();
    let nonzero: Vec<usize> = (0..12).filter(|&t| g.value(y).get(0, t) != 0.0).collect();
    assert_eq!(nonzero, vec![5, 7]);

    let mut r = rng(9);
    let base = random_matrix(3, 16, 1.0, &mut r);
    let wv = random_matrix(4, 3, 1.0, &mut r);
    let run = |x: &Matrix| {
        let mut g = Graph::new();
        let (x, w) = (g.leaf(x.clone()), g.leaf(wv.clone()));
        let y = g.dilated_conv(x, w, 3, 16).unwrap();
        g.value(y).clone()
    };
    let y0 = run(&base);
    let mut bumped = base.clone();
    bumped.set(1, 9, bumped.get(1, 9) + 1.0);
    let y1 = run(&bumped);
    for t in 0..9 {
        for c in 0..2 {
            assert_eq!(y0.get(c, t).to_bits(), y1.get(c, t).to_bits());
        }
    }
    assert_ne!(y0.get(0, 9), y1.get(0, 9));
}

#[test]
fn dilated_conv_gradients() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let inputs = [random_matrix(3, 12, 1.0, &mut r), random_matrix(4, 3, 1.0, &mut r)];
        assert_passes("dilated", &inputs, seed, |g, v| g.dilated_conv(v[0], v[1], 2, 6));
    }
}

#[test]
fn transposed_conv_lengths_and_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::zeros(4, 10));
    let w1 = g.leaf(Matrix::filled(16 * 3, 4, 0.1));
    let b1 = g.leaf(Matrix::zeros(3, 1));
    let w2 = g.leaf(Matrix::filled(32 * 3, 3, 0.1));
    let b2 = g.leaf(Matrix::zeros(3, 1));
    let h = g.transposed_conv(x, w1, b1, 8, 16, 10).unwrap();
    let y = g.transposed_conv(h, w2, b2, 16, 32, 80).unwrap();
    assert_eq!(g.value(y).cols(), 1280);
    assert!(g.value(y).as_slice().iter().all(|&v| v == 0.0));
    assert!(g.transposed_conv(x, w1, b1, 32, 16, 10).is_err());
}

#[test]
fn transposed_conv_gradients() {
    for seed in SEEDS {
        let mut r = rng(seed);
        // Two sequences of 3 steps, kernel 4 stride 2.
        let inputs = [random_matrix(2, 6, 1.0, &mut r), random_matrix(4 * 3, 2, 1.0, &mut r), random_matrix(3, 1, 1.0, &mut r)];
        assert_passes("transposed", &inputs, seed, |g, v| g.transposed_conv(v[0], v[1], v[2], 2, 4, 3));
    }
}

#[test]
fn elementwise_and_structural_gradients() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let inputs = [random_matrix(4, 5, 0.9, &mut r), random_matrix(4, 5, 0.9, &mut r), random_matrix(3, 5, 0.9, &mut r)];
        assert_passes("mix", &inputs, seed, |g, v| {
            let a = g.tanh(v[0]);
            let b = g.sigmoid(v[1]);
            let p = g.mul(a, b)?;
            let q = g.sub(p, v[1])?;
            let q = g.scale(q, 1.7);
            let q = g.add_scalar(q, 0.3);
            let e = g.unary(q, Unary::Square);
            let c = g.concat_rows(&[e, v[2]])?;
            let s = g.slice_rows(c, 2, 4)?;
            let sh = g.shift(s, -2, 5)?;
            let sh2 = g.shift(sh, 1, 5)?;
            let x = g.unary(sh2, Unary::Exp);
            let m = g.mean_all(x);
            let t = g.add(x, sh2)?;
            let s2 = g.sum_all(t);
            g.mul(m, s2)
        });
        assert_passes("gated", &inputs[..1], seed, |g, v| g.gated(v[0]));
        assert_passes("atanh", &inputs[..1], seed, |g, v| Ok(g.unary(v[0], Unary::Atanh4)));
    }
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = Matrix::from_vec(2, 2, vec![0.5, -0.7, 1.2, -0.1]);
    assert_passes("relu", &[x], 1, |g, v| Ok(g.relu(v[0])));
}

#[test]
fn gather_gradient_hits_selected_rows_only() {
    let mut g = Graph::new();
    let table = g.leaf(Matrix::from_fn(4, 2, |r, c| (r * 2 + c) as f64));
    let picked = g.gather(table, &[0, 0, 1]).unwrap();
    assert_eq!(g.value(picked), &Matrix::from_vec(2, 3, vec![0.0, 0.0, 2.0, 1.0, 1.0, 3.0]));
    let loss = g.sum_all(picked);
    let grads = g.backward(loss);
    let d = grads.get(table).unwrap();
    assert_eq!(d.row(0), &[2.0, 2.0]);
    assert_eq!(d.row(1), &[1.0, 1.0]);
    assert_eq!(d.row(2), &[0.0, 0.0]);
    assert!(matches!(g.gather(table, &[4]), Err(AutogradError::Index { .. })));

    for seed in SEEDS {
        let mut r = rng(seed);
        assert_passes("gather", &[random_matrix(5, 3, 1.0, &mut r)], seed, |g, v| g.gather(v[0], &[4, 1, 1, 0]));
    }
}

#[test]
fn cross_entropy_values_and_gradient() {
    let mut g = Graph::new();
    let zeros = g.leaf(Matrix::zeros(256, 7));
    let ce = g.cross_entropy(zeros, &[0, 5, 255, 128, 128, 3, 9]).unwrap();
    assert!((g.scalar(ce) - 256f64.ln()).abs() < 1e-12);
    // Large logits must not overflow.
    let big = g.leaf(Matrix::from_vec(2, 1, vec![1000.0, 0.0]));
    let ce = g.cross_entropy(big, &[0]).unwrap();
    assert!(g.scalar(ce).abs() < 1e-12);

    for seed in SEEDS {
        let mut r = rng(seed);
        let logits = random_matrix(6, 5, 2.0, &mut r);
        let report = check(&[logits], seed, |g, v| g.cross_entropy(v[0], &[0, 5, 2, 2, 1])).unwrap();
        assert!(report.passed(), "{:?}", report.relative_errors);
        let targets = [IGNORE_TARGET, 5, 2, IGNORE_TARGET, 1];
        let report = check(&[random_matrix(6, 5, 2.0, &mut r)], seed, |g, v| g.cross_entropy(v[0], &targets)).unwrap();
        assert!(report.passed(), "{:?}", report.relative_errors);
    }
}

#[test]
fn ignored_targets_leave_the_mean() {
    let mut r = rng(3);
    let logits = random_matrix(4, 3, 1.0, &mut r);
    let mut g = Graph::new();
    let all = g.leaf(logits.clone());
    let kept = g.leaf(logits.slice_cols(1, 2));
    let masked = g.cross_entropy(all, &[IGNORE_TARGET, 2, 0]).unwrap();
    let plain = g.cross_entropy(kept, &[2, 0]).unwrap();
    assert!((g.scalar(masked) - g.scalar(plain)).abs() < 1e-12);
    let grads = g.backward(masked);
    assert!(grads.get(all).unwrap().column(0).iter().all(|&v| v == 0.0));
}

#[test]
fn parameter_gradients_are_summed_per_parameter() {
    let mut store = ParamStore::new();
    let w = store.add("w", Matrix::filled(1, 1, 2.0)).unwrap();
    let mut g = Graph::new();
    let a = g.param(&store, w);
    let b = g.param(&store, w);
    let p = g.mul(a, b).unwrap();
    let grads = g.backward(p);
    let pg = g.param_grads(&grads, &store);
    assert_eq!(pg.get(w).get(0, 0), 4.0);
    assert!(matches!(store.add("w", Matrix::zeros(1, 1)), Err(AutogradError::DuplicateParam(_))));
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut r = rng(77);
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", 3, 4, 4, &mut r).unwrap();
        let b = store.add_zeros("b", 3, 1).unwrap();
        let x = random_matrix(4, 6, 1.0, &mut r);
        let mut adam = Adam::new(&store, 0.01);
        for _ in 0..5 {
            let mut g = Graph::new();
            let (wv, bv, xv) = (g.param(&store, w), g.param(&store, b), g.leaf(x.clone()));
            let y = g.linear(wv, xv, bv).unwrap();
            let y = g.tanh(y);
            let sq = g.unary(y, Unary::Square);
            let loss = g.mean_all(sq);
            let grads = g.backward(loss);
            let pg = g.param_grads(&grads, &store);
            adam.step(&mut store, &pg).unwrap();
        }
        store
    };
    assert_eq!(run(), run());
}
