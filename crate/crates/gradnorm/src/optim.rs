//! Adam optimizer. One state drives either the network parameters or the
//! balancer's loss-weight vector; both use the standard update with bias
//! correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
    config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    /// State for `len` parameters, moments initialized to zero.
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Drop accumulated moments and the step counter.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
        self.step = 0;
    }

    /// One update over a single contiguous parameter block.
    pub fn update(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        self.update_slices(&mut [params], &[grads])
    }

    /// One update over parameters split across several blocks (e.g. the
    /// per-layer weight and bias tensors of a model). Total lengths must
    /// match the state exactly.
    pub fn update_slices(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        let p_total: usize = params.iter().map(|p| p.len()).sum();
        let g_total: usize = grads.iter().map(|g| g.len()).sum();
        if p_total != self.m.len() || g_total != self.m.len() || params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_update",
                lhs: (p_total, g_total),
                rhs: (self.m.len(), self.m.len()),
            });
        }
        self.step += 1;
        let b1 = T::from_f64(self.config.beta1);
        let b2 = T::from_f64(self.config.beta2);
        let lr = T::from_f64(self.config.lr);
        let eps = T::from_f64(self.config.epsilon);
        let one = T::one();
        let bias1 = one - b1.powi(self.step as i32);
        let bias2 = one - b2.powi(self.step as i32);

        let mut offset = 0;
        for (pblock, gblock) in params.iter_mut().zip(grads) {
            if pblock.len() != gblock.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_update",
                    lhs: (pblock.len(), 0),
                    rhs: (gblock.len(), 0),
                });
            }
            let m = &mut self.m[offset..offset + pblock.len()];
            let v = &mut self.v[offset..offset + pblock.len()];
            for i in 0..pblock.len() {
                let g = gblock[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                pblock[i] = pblock[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += pblock.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_never_moves_parameters() {
        let mut state = AdamState::<f64>::new(3, AdamConfig::with_lr(0.1));
        let mut params = vec![1.0, -2.0, 0.5];
        let start = params.clone();
        for _ in 0..50 {
            state.update(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, start);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // m_hat / sqrt(v_hat) = g/|g| after one step, so the move is
        // lr * sign(g) up to the epsilon in the denominator.
        let lr = 0.025;
        let mut state = AdamState::<f64>::new(2, AdamConfig::with_lr(lr));
        let mut params = vec![0.0, 0.0];
        state.update(&mut params, &[3.0, -0.001]).unwrap();
        assert!((params[0] - (-lr)).abs() < 1e-6);
        assert!((params[1] - lr).abs() < 1e-4);
    }

    #[test]
    fn deterministic_given_identical_inputs() {
        let run = || {
            let mut state = AdamState::<f64>::new(2, AdamConfig::with_lr(0.01));
            let mut params = vec![0.3, -0.7];
            for t in 0..200 {
                let g = [params[0] * 2.0 + t as f64 * 0.001, params[1].sin()];
                state.update(&mut params, &g).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut state = AdamState::<f64>::new(1, AdamConfig::with_lr(0.1));
        let mut x = vec![1.0];
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            state.update(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn negating_gradients_negates_updates() {
        let grads = [0.4, -1.2, 0.05];
        let mut a = AdamState::<f64>::new(3, AdamConfig::with_lr(0.01));
        let mut pa = vec![0.0; 3];
        a.update(&mut pa, &grads).unwrap();

        let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
        let mut b = AdamState::<f64>::new(3, AdamConfig::with_lr(0.01));
        let mut pb = vec![0.0; 3];
        b.update(&mut pb, &neg).unwrap();

        for (x, y) in pa.iter().zip(&pb) {
            assert!((x + y).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut state = AdamState::<f64>::new(2, AdamConfig::with_lr(0.1));
        let mut params = vec![0.0, 0.0];
        assert!(state.update(&mut params, &[1.0]).is_err());
    }

    #[test]
    fn step_counter_increments() {
        let mut state = AdamState::<f64>::new(1, AdamConfig::with_lr(0.1));
        let mut p = vec![0.0];
        for expected in 1..=5 {
            state.update(&mut p, &[1.0]).unwrap();
            assert_eq!(state.step_count(), expected);
        }
    }
}
