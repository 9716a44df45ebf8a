//! Central finite-difference gradient checking.
//!
//! The scalar probed is `sum(output * R)` for a fixed random `R`, so every
//! output element contributes with a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutogradError, Graph, Var};
use crate::matrix::Matrix;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < TOLERANCE
    }
}

fn weighted_loss<F>(inputs: &[Matrix], weights: &mut Option<Matrix>, seed: u64, build: &F) -> Result<(Graph, Vec<Var>, Var), AutogradError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutogradError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
    let out = build(&mut g, &vars)?;
    let w = weights.get_or_insert_with(|| {
        let v = g.value(out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        Matrix::from_fn(v.rows(), v.cols(), |_, _| rng.gen_range(-1.0..1.0))
    });
    let wv = g.leaf(w.clone());
    let prod = g.mul(out, wv)?;
    let loss = g.sum_all(prod);
    Ok((g, vars, loss))
}

/// Compares reverse-mode gradients of every input against central differences.
pub fn check<F>(inputs: &[Matrix], seed: u64, build: F) -> Result<GradCheckReport, AutogradError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutogradError>,
{
    let mut weights = None;
    let (g, vars, loss) = weighted_loss(inputs, &mut weights, seed, &build)?;
    let grads = g.backward(loss);
    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(inputs[i].rows(), inputs[i].cols()));
        let mut numeric = vec![0.0; inputs[i].as_slice().len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].as_slice()[k];
            probe[i].as_mut_slice()[k] = orig + STEP;
            let (gp, _, lp) = weighted_loss(&probe, &mut weights, seed, &build)?;
            probe[i].as_mut_slice()[k] = orig - STEP;
            let (gm, _, lm) = weighted_loss(&probe, &mut weights, seed, &build)?;
            probe[i].as_mut_slice()[k] = orig;
            *slot = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * STEP);
        }
        let diff: f64 = analytic
            .as_slice()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let scale = na.max(nn);
        relative_errors.push(if scale == 0.0 { 0.0 } else { diff / scale });
    }
    Ok(GradCheckReport { relative_errors })
}

/// Uniform `(-scale, scale)` matrix from `rng`.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}
