use super::{AutogradError, ParamGrads, ParamStore};
use crate::matrix::Matrix;

/// `initial * 0.5^floor(step / halve_every)`.
pub fn lr_schedule(initial: f64, halve_every: u64, step: u64) -> f64 {
    assert!(halve_every >= 1, "halve_every must be at least 1");
    let halvings = (step / halve_every).min(i32::MAX as u64) as i32;
    initial * 0.5f64.powi(halvings)
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl AdamState {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            state: AdamState::zeros_like(store),
        }
    }

    /// Bias-corrected Adam update of every trainable parameter. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<(), AutogradError> {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        for (id, p) in store.iter() {
            if grads.get(id).as_slice().iter().any(|v| !v.is_finite()) {
                return Err(AutogradError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.state.step += 1;
        let t = self.state.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let g = grads.get(id).as_slice();
            let m = self.state.first[id.index()].as_mut_slice();
            let v = self.state.second[id.index()].as_mut_slice();
            for (((w, &gi), mi), vi) in p.value.as_mut_slice().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0.002, 40_000, 0), 0.002);
        assert_eq!(lr_schedule(0.002, 40_000, 39_999), 0.002);
        assert_eq!(lr_schedule(0.002, 40_000, 40_000), 0.001);
        assert!((lr_schedule(0.001, 100_000, 250_000) - 0.000_25).abs() < 1e-18);
    }

    fn one_param(init: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Matrix::filled(1, 1, init)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_moments() {
        let mut store = one_param(0.7);
        let mut adam = Adam::new(&store, 0.01);
        let grads = ParamGrads::zeros_like(&store);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(store.id("w").unwrap()).value.get(0, 0), 0.7);
        assert_eq!(adam.state.step, 1);
        assert_eq!(adam.state.first[0].get(0, 0), 0.0);
        assert_eq!(adam.state.second[0].get(0, 0), 0.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let mut store = one_param(1.0);
        let mut adam = Adam::new(&store, 0.002);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.get_mut(store.id("w").unwrap()).set(0, 0, 1.0);
        adam.step(&mut store, &grads).unwrap();
        let moved = 1.0 - store.get(store.id("w").unwrap()).value.get(0, 0);
        let expected = 0.002 * 1.0 / (1.0 + 1e-8);
        assert!((moved - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_parameters_stay_identical() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::filled(2, 2, 0.3)).unwrap();
        let b = store.add("b", Matrix::filled(2, 2, 0.3)).unwrap();
        let mut adam = Adam::new(&store, 0.01);
        for k in 0..5 {
            let mut grads = ParamGrads::zeros_like(&store);
            let g = Matrix::from_fn(2, 2, |r, c| (r + c + k) as f64 * 0.1 - 0.2);
            grads.accumulate(a, &g);
            grads.accumulate(b, &g);
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get(a).value, store.get(b).value);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = one_param(1.0);
        let mut adam = Adam::new(&store, 0.01);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.get_mut(store.id("w").unwrap()).set(0, 0, f64::NAN);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert_eq!(err, AutogradError::NonFiniteGradient("w".into()));
        assert_eq!(adam.state.step, 0);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = one_param(1.0);
        let id = store.id("w").unwrap();
        store.get_mut(id).trainable = false;
        let mut adam = Adam::new(&store, 0.1);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.get_mut(id).set(0, 0, 3.0);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).value.get(0, 0), 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::zeros(1, 2)).unwrap();
        let mut grads = ParamGrads::zeros_like(&store);
        grads.accumulate(a, &Matrix::from_vec(1, 2, vec![3.0, 4.0]));
        assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        assert!((grads.get(a).get(0, 0) - 0.6).abs() < 1e-12);
    }
}
