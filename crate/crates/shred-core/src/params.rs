//! Named parameter storage with gradients.
//!
//! A [`ParamStore`] owns every trainable matrix of a model plus a gradient
//! buffer of the same shape. Initialization is seeded and *name-keyed*: each
//! parameter draws from its own PRNG stream derived from the store's init
//! seed and the FNV hash of its name, so adding or reordering registrations
//! never shifts the values of unrelated parameters.
//!
//! Weights initialize uniform in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`;
//! biases start at zero and norm gains at one.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mat::Matrix;
use crate::real::Real;
use crate::rng::{fnv1a, Pcg32};
use crate::tape::{Tape, Var};

/// Stable handle to one parameter (index into registration order).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Param<T: Real> {
    name: String,
    value: Matrix<T>,
    grad: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T: Real> {
    entries: Vec<Param<T>>,
    by_name: BTreeMap<String, usize>,
    init_seed: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new(init_seed: u64) -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
            init_seed,
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.data().len()).sum()
    }

    fn register(&mut self, name: &str, value: Matrix<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(CoreError::DuplicateParam(name.to_string()));
        }
        let id = self.entries.len();
        self.by_name.insert(name.to_string(), id);
        let (r, c) = value.shape();
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
        });
        Ok(ParamId(id))
    }

    /// Weight matrix, uniform `(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
    pub fn add_weight(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
    ) -> Result<ParamId> {
        debug_assert!(fan_in > 0);
        let bound = 1.0 / Real::sqrt(fan_in as f64);
        let mut rng = Pcg32::with_stream(self.init_seed, fnv1a(name.as_bytes()));
        let value = Matrix::from_fn(rows, cols, |_, _| {
            rng.uniform(T::from_f64(-bound), T::from_f64(bound))
        });
        self.register(name, value)
    }

    /// Bias-style parameter, all zeros.
    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.register(name, Matrix::zeros(rows, cols))
    }

    /// Gain-style parameter, all ones.
    pub fn add_ones(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.register(name, Matrix::filled(rows, cols, T::ONE))
    }

    /// Register an explicit value (tests, fixtures, checkpoint restore).
    pub fn add_value(&mut self, name: &str, value: Matrix<T>) -> Result<ParamId> {
        self.register(name, value)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.entries[id.0].grad
    }

    /// Mutable value and shared gradient of one parameter, borrowed
    /// together (optimizer update loops).
    pub fn value_and_grad(&mut self, id: ParamId) -> (&mut Matrix<T>, &Matrix<T>) {
        let Param { value, grad, .. } = &mut self.entries[id.0];
        (value, grad)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(T::ZERO);
        }
    }

    /// `(name, value, grad)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>, &Matrix<T>)> {
        self.entries
            .iter()
            .map(|p| (p.name.as_str(), &p.value, &p.grad))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Put every parameter on a tape as a leaf; returns vars aligned with
    /// registration order (index by `ParamId.0` via [`BoundParams`]).
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }

    /// Accumulate leaf gradients from a tape after `backward`.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &BoundParams) {
        for (p, &v) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(v) {
                p.grad.add_assign_mat(g);
            }
        }
    }

    /// Deep copy of all values, for checkpointing.
    pub fn snapshot(&self) -> Vec<(String, Matrix<T>)> {
        self.entries
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Restore values from a snapshot; names and shapes must match exactly.
    pub fn restore(&mut self, snapshot: &[(String, Matrix<T>)]) -> Result<()> {
        for (name, value) in snapshot {
            let id = self.id(name)?;
            if self.entries[id.0].value.shape() != value.shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "ParamStore::restore",
                    left: self.entries[id.0].value.shape(),
                    right: value.shape(),
                });
            }
            self.entries[id.0].value = value.clone();
        }
        Ok(())
    }
}

/// Tape vars for all parameters of one forward/backward pass.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
