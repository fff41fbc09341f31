use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Moment accumulators for Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One Adam update. Accumulators are allocated on the first call and
    /// their shapes are checked against `params` on every later call.
    pub fn update(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam_step",
                (params.len(), 1),
                (grads.len(), 1),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "adam_step")?;
        }
        if self.first.is_empty() {
            self.first = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                (self.first.len(), 1),
                (params.len(), 1),
            ));
        }
        for (p, m) in params.iter().zip(&self.first) {
            p.same_shape(m, "adam_step")?;
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let ps = p.as_mut_slice();
            let gs = g.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for i in 0..ps.len() {
                let gi = gs[i];
                ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ps[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[&Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.update(params, grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_exact_noop() {
        let mut p = Matrix::from_rows(&[&[1.25, -3.0], &[0.1, 7.0]]);
        let before = p.clone();
        let g = Matrix::zeros(2, 2);
        let mut st = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut st, 0.1).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → Δ = lr / (1 + eps)
        let mut p = Matrix::from_rows(&[&[1.0]]);
        let g = Matrix::from_rows(&[&[1.0]]);
        let mut st = AdamState::default();
        adam_step(&mut [&mut p], &[&g], &mut st, 0.1).unwrap();
        assert!((p.get(0, 0) - 0.9).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        // Reference trace: with a constant gradient, m̂ = g and v̂ = g² at
        // every step, so each step is lr·g/(|g| + eps).
        let mut p = Matrix::from_rows(&[&[0.0]]);
        let g = Matrix::from_rows(&[&[0.3]]);
        let mut st = AdamState::default();
        let mut prev = 0.0;
        for _ in 0..1000 {
            adam_step(&mut [&mut p], &[&g], &mut st, 1e-3).unwrap();
            let cur = p.get(0, 0);
            assert!(cur.is_finite());
            assert!(cur < prev);
            prev = cur;
        }
        let expected = -1000.0 * 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((prev - expected).abs() < 1e-9, "{prev} vs {expected}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut st = AdamState::default();
        assert!(matches!(
            adam_step(&mut [&mut p], &[&g], &mut st, 0.1),
            Err(Error::Shape { .. })
        ));
        // accumulators lock in shapes after the first update
        let g_ok = Matrix::zeros(2, 2);
        adam_step(&mut [&mut p], &[&g_ok], &mut st, 0.1).unwrap();
        let mut q = Matrix::zeros(3, 3);
        let gq = Matrix::zeros(3, 3);
        assert!(adam_step(&mut [&mut q], &[&gq], &mut st, 0.1).is_err());
    }
}
