//! AdamW with decoupled weight decay and a step-decay learning rate.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ParamKind, Parameter};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("parameter {index}: shape {param:?} but gradient {grad:?}")]
    Shape {
        index: usize,
        param: (usize, usize),
        grad: (usize, usize),
    },
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
    #[error("non-finite gradient or update at parameter {index}")]
    Numerical { index: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay coefficient `lambda`, applied to weights only.
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    /// Decay coupled to the dropout rate: `1e-4 * (1 - p_do)`.
    pub fn coupled_weight_decay(dropout_rate: f64) -> f64 {
        1e-4 * (1.0 - dropout_rate)
    }

    pub fn with_weight_decay(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    pub hyper: AdamW,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zeroed moments shaped like `shapes`.
    pub fn new(hyper: AdamW, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Array2::zeros(s), Array2::zeros(s))).unzip();
        Self { hyper, m, v, t: 0 }
    }

    pub fn for_parameters(hyper: AdamW, params: &[Parameter<T>]) -> Self {
        Self::new(hyper, params.iter().map(|p| p.tensor.shape()))
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Array2<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Array2<T>] {
        &self.v
    }

    /// One AdamW update of every array. `decay[i]` selects which arrays
    /// receive weight decay.
    pub fn update(
        &mut self,
        params: &mut [&mut Array2<T>],
        grads: &[Array2<T>],
        decay: &[bool],
        lr: T,
    ) -> Result<(), OptimError> {
        if grads.len() != self.m.len() || params.len() != self.m.len() || decay.len() != self.m.len() {
            return Err(OptimError::Count {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.m[i].dim() {
                return Err(OptimError::Shape {
                    index: i,
                    param: p.dim(),
                    grad: g.dim(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(OptimError::Numerical { index: i });
            }
        }

        self.t += 1;
        let h = self.hyper;
        let (b1, b2, eps) = (T::lit(h.beta1), T::lit(h.beta2), T::lit(h.epsilon));
        let bias1 = T::one() - b1.powi(self.t as i32);
        let bias2 = T::one() - b2.powi(self.t as i32);
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let lambda = if decay[i] { T::lit(h.weight_decay) } else { T::zero() };
            Zip::from(&mut **p)
                .and(&grads[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|theta, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + lambda * *theta);
                });
            if !p.iter().all(|v| v.is_finite()) {
                return Err(OptimError::Numerical { index: i });
            }
        }
        Ok(())
    }

    /// Updates model parameters; weight decay skips biases.
    pub fn apply_step(&mut self, params: &mut [Parameter<T>], grads: &[Array2<T>], lr: T) -> Result<(), OptimError> {
        let decay: Vec<bool> = params.iter().map(|p| p.kind == ParamKind::Weight).collect();
        let mut arrays: Vec<&mut Array2<T>> = params.iter_mut().map(|p| p.tensor.data_mut()).collect();
        self.update(&mut arrays, grads, &decay, lr)
    }
}

/// `initial_lr * decay_factor ^ (number of decay epochs <= epoch)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            decay_factor: 0.1,
            decay_epochs: vec![80, 160],
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(OptimError::Schedule("initial_lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(OptimError::Schedule("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OptimError::Schedule("decay_epochs must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial_lr * self.decay_factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_relative_eq!(s.lr_at(100), 1e-4, max_relative = 1e-12);
        assert_relative_eq!(s.lr_at(170), 1e-5, max_relative = 1e-12);
        assert_relative_eq!(s.lr_at(80), 1e-4, max_relative = 1e-12);
        assert!(LrSchedule {
            decay_epochs: vec![80, 80],
            ..LrSchedule::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = OptimizerState::<f64>::new(AdamW::default(), [(1, 1)]);
        let mut theta = array![[1.0]];
        st.update(&mut [&mut theta], &[array![[1.0]]], &[true], 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        assert_relative_eq!(theta[[0, 0]], 1.0 - 1e-3 / (1.0 + 1e-8), max_relative = 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_stationary() {
        let mut st = OptimizerState::<f64>::new(AdamW::default(), [(2, 2)]);
        let mut theta = array![[1.0, -2.0], [0.5, 3.0]];
        let before = theta.clone();
        for _ in 0..5 {
            st.update(&mut [&mut theta], &[Array2::zeros((2, 2))], &[true], 1e-3)
                .unwrap();
        }
        assert_eq!(theta, before);
    }

    #[test]
    fn decay_skips_biases() {
        let mut st = OptimizerState::<f64>::new(AdamW::with_weight_decay(0.5), [(1, 1), (1, 1)]);
        let mut w = array![[2.0]];
        let mut b = array![[2.0]];
        st.update(
            &mut [&mut w, &mut b],
            &[array![[0.0]], array![[0.0]]],
            &[true, false],
            0.1,
        )
        .unwrap();
        assert_relative_eq!(w[[0, 0]], 2.0 - 0.1 * 0.5 * 2.0, max_relative = 1e-15);
        assert_eq!(b[[0, 0]], 2.0);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut st = OptimizerState::<f64>::new(AdamW::default(), [(1, 2)]);
        let mut theta = array![[1.0, 1.0]];
        assert!(matches!(
            st.update(&mut [&mut theta], &[array![[1.0]]], &[true], 1e-3),
            Err(OptimError::Shape { .. })
        ));
        assert!(matches!(
            st.update(&mut [&mut theta], &[array![[f64::NAN, 0.0]]], &[true], 1e-3),
            Err(OptimError::Numerical { .. })
        ));
        assert_eq!(st.step_count(), 0);
    }
}
