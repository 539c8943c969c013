//! First-order optimizers over a [`ParamStore`]: Adam (the default) and
//! plain SGD.
//!
//! Adam keeps per-parameter first and second moment buffers. After
//! coefficient pruning the train loop clears the moments of masked entries
//! with [`Optimizer::zero_moments`]; together with the zero gradients the
//! mask guarantees, that pins pruned coefficients at exactly zero through
//! any number of subsequent steps.

use alloc::vec::Vec;

use crate::mat::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn token(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

pub struct Optimizer<T: Real> {
    kind: OptimizerKind,
    lr: f64,
    /// First/second moments, aligned with parameter registration order.
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    t: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore<T>) -> Self {
        let shapes: Vec<Matrix<T>> = store
            .iter()
            .map(|(_, value, _)| Matrix::zeros(value.rows(), value.cols()))
            .collect();
        Optimizer {
            kind,
            lr,
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Apply one update from the gradients currently in the store.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64(self.lr);
                for id in store.ids().collect::<Vec<_>>() {
                    let (value, grad) = store.value_and_grad(id);
                    for (p, &g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let b1 = T::from_f64(ADAM_BETA1);
                let b2 = T::from_f64(ADAM_BETA2);
                let one = T::ONE;
                let eps = T::from_f64(ADAM_EPS);
                // Bias corrections in f64: beta^t underflows gracefully.
                let bc1 = 1.0 - pow_f64(ADAM_BETA1, self.t);
                let bc2 = 1.0 - pow_f64(ADAM_BETA2, self.t);
                let inv_bc1 = T::from_f64(1.0 / bc1);
                let inv_bc2 = T::from_f64(1.0 / bc2);
                let lr = T::from_f64(self.lr);

                for id in store.ids().collect::<Vec<_>>() {
                    let (value, grad) = store.value_and_grad(id);
                    let m = &mut self.m[id_index(id)];
                    let v = &mut self.v[id_index(id)];
                    for (((p, &g), mi), vi) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mi = b1 * *mi + (one - b1) * g;
                        *vi = b2 * *vi + (one - b2) * g * g;
                        let mhat = *mi * inv_bc1;
                        let vhat = *vi * inv_bc2;
                        *p -= lr * mhat / (Real::sqrt(vhat) + eps);
                    }
                }
            }
        }
    }

    /// Clear the moment buffers of masked entries (row-major mask over the
    /// parameter). Called after pruning so stale momentum cannot move a
    /// pruned coefficient off zero.
    pub fn zero_moments(&mut self, id: ParamId, mask: &[bool]) {
        let idx = id_index(id);
        for (buf, &keep) in self.m[idx].data_mut().iter_mut().zip(mask) {
            if !keep {
                *buf = T::ZERO;
            }
        }
        for (buf, &keep) in self.v[idx].data_mut().iter_mut().zip(mask) {
            if !keep {
                *buf = T::ZERO;
            }
        }
    }
}

fn id_index(id: ParamId) -> usize {
    // ParamId is the registration index; BoundParams relies on the same fact.
    id.0
}

fn pow_f64(base: f64, exp: u64) -> f64 {
    // Exponentiation by squaring; core has no powi.
    let mut result = 1.0;
    let mut base = base;
    let mut exp = exp;
    while exp > 0 {
        if exp & 1 == 1 {
            result *= base;
        }
        base *= base;
        exp >>= 1;
    }
    result
}
