//! Eager reverse-mode autodiff over dense matrices.
//!
//! A [`Tape`] records every operation as it is evaluated; [`Tape::backward`]
//! then walks the record once in reverse, accumulating gradients into every
//! node. Because nodes are appended eagerly, the record is already
//! topologically ordered and parents always precede children.
//!
//! The op set is exactly what the encoders, decoders and losses in this
//! crate compose: dense products, broadcast adds, pointwise nonlinearities,
//! row softmax, layer norm, slicing/concatenation, a strided transposed
//! convolution, and scalar reductions. Gradients accumulate (`+=`) so a
//! value used several times collects contributions from every use.
//!
//! A tape is single-shot: running backward twice is an error, because the
//! graph for a new step must be rebuilt from the updated parameters anyway.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mat::Matrix;
use crate::real::Real;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a transposed 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTSpec {
    pub fn out_h(&self) -> usize {
        (self.in_h - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - 1) * self.stride + self.kernel - 2 * self.pad
    }

    /// Weight matrix shape: one row per input channel, `out_channels * k * k`
    /// columns.
    pub fn weight_shape(&self) -> (usize, usize) {
        (
            self.in_channels,
            self.out_channels * self.kernel * self.kernel,
        )
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[n x d] + [1 x d]`, row broadcast.
    AddRow(Var, Var),
    /// `[n x d] + [n x 1]`, column broadcast.
    AddCol(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    SumAll(Var),
    /// Elementwise product with a constant (no gradient into the constant).
    MulConst(Var, Rc<Matrix<T>>),
    ConvT2d {
        x: Var,
        w: Var,
        spec: ConvTSpec,
    },
}

struct Node<T: Real> {
    value: Matrix<T>,
    grad: Option<Matrix<T>>,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss w.r.t. `v`; `None` before `backward` has run.
    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input: a parameter, a data window, or any constant the
    /// caller does not care to distinguish (its gradient is simply unused).
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                left: (ar, ac),
                right: (br, bc),
            });
        }
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        self.push(value, Op::Transpose(a))
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(CoreError::ShapeMismatch {
                op: op_name,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        let rshape = self.shape(row);
        if rshape != (1, d) {
            return Err(CoreError::ShapeMismatch {
                op: "add_row",
                left: (n, d),
                right: rshape,
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        for r in 0..n {
            let dst = value.row_mut(r);
            for (x, &b) in dst.iter_mut().zip(self.nodes[row.0].value.row(0)) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, d) = self.shape(a);
        let cshape = self.shape(col);
        if cshape != (n, 1) {
            return Err(CoreError::ShapeMismatch {
                op: "add_col",
                left: (n, d),
                right: cshape,
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        for r in 0..n {
            let b = self.nodes[col.0].value[(r, 0)];
            for x in value.row_mut(r) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.maxv(T::ZERO));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .map(|x| T::ONE / (T::ONE + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(Real::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(Real::sin);
        self.push(value, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(Real::cos);
        self.push(value, Op::Cos(a))
    }

    /// Numerically stable softmax along each row. Rejects NaN input: a NaN
    /// would silently poison the max-subtraction trick.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        if !self.nodes[a.0].value.all_finite() {
            let finite_nan = self.nodes[a.0]
                .value
                .data()
                .iter()
                .any(|x| x.to_f64().is_nan());
            if finite_nan {
                return Err(CoreError::NonFinite(format!(
                    "row_softmax: NaN in input of shape {}x{}",
                    self.shape(a).0,
                    self.shape(a).1
                )));
            }
            // +/- infinity is allowed: causal masks use large negative values,
            // and exp() saturates cleanly.
        }
        let x = &self.nodes[a.0].value;
        let (n, d) = x.shape();
        let mut value = Matrix::zeros(n, d);
        for r in 0..n {
            let row = x.row(r);
            let mut max = row[0];
            for &v in row {
                max = max.maxv(v);
            }
            let mut sum = T::ZERO;
            let out = value.row_mut(r);
            for (o, &v) in out.iter_mut().zip(row) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in out.iter_mut() {
                *o = *o / sum;
            }
        }
        Ok(self.push(value, Op::RowSoftmax(a)))
    }

    /// Row-wise layer norm with learnable gain and bias (`[1 x d]` each),
    /// epsilon `1e-5` inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        for (name, v) in [("layer_norm gain", gain), ("layer_norm bias", bias)] {
            if self.shape(v) != (1, d) {
                return Err(CoreError::ShapeMismatch {
                    op: if name.ends_with("gain") {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    left: (n, d),
                    right: self.shape(v),
                });
            }
        }
        let mut value = Matrix::zeros(n, d);
        for r in 0..n {
            let row = self.nodes[x.0].value.row(r);
            let (mean, inv) = row_moments(row);
            let g = self.nodes[gain.0].value.row(0);
            let b = self.nodes[bias.0].value.row(0);
            let out = value.row_mut(r);
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                out[c] = g[c] * xh + b[c];
            }
        }
        Ok(self.push(value, Op::LayerNorm { x, gain, bias }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        debug_assert!(!parts.is_empty());
        let n = self.shape(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != n {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: (r, c),
                });
            }
            total += c;
        }
        let mut value = Matrix::zeros(n, total);
        let mut off = 0;
        for &p in parts {
            let (_, c) = self.shape(p);
            for r in 0..n {
                let src = self.nodes[p.0].value.row(r).to_vec();
                value.row_mut(r)[off..off + c].copy_from_slice(&src);
            }
            off += c;
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        debug_assert!(!parts.is_empty());
        let d = self.shape(parts[0]).1;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != d {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(parts[0]),
                    right: (r, c),
                });
            }
            total += r;
        }
        let mut value = Matrix::zeros(total, d);
        let mut off = 0;
        for &p in parts {
            let (r, _) = self.shape(p);
            for i in 0..r {
                let src = self.nodes[p.0].value.row(i).to_vec();
                value.row_mut(off + i).copy_from_slice(&src);
            }
            off += r;
        }
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        if start + len > d || len == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "slice_cols: range {start}..{} out of 0..{d}",
                start + len
            )));
        }
        let mut value = Matrix::zeros(n, len);
        for r in 0..n {
            let src = self.nodes[x.0].value.row(r)[start..start + len].to_vec();
            value.row_mut(r).copy_from_slice(&src);
        }
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        if start + len > n || len == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "slice_rows: range {start}..{} out of 0..{n}",
                start + len
            )));
        }
        let mut value = Matrix::zeros(len, d);
        for r in 0..len {
            let src = self.nodes[x.0].value.row(start + r).to_vec();
            value.row_mut(r).copy_from_slice(&src);
        }
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Reinterpret the row-major buffer with a new shape of equal size.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                left: (r, c),
                right: (rows, cols),
            });
        }
        let value = Matrix::from_vec(rows, cols, self.nodes[x.0].value.data().to_vec());
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Sum of all entries, as a `1 x 1` matrix.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = T::ZERO;
        for &v in self.nodes[x.0].value.data() {
            acc += v;
        }
        self.push(Matrix::from_vec(1, 1, vec![acc]), Op::SumAll(x))
    }

    /// Mean of all entries, as a `1 x 1` matrix.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let s = self.sum_all(x);
        self.scale(s, T::ONE / T::from_f64((r * c) as f64))
    }

    /// Elementwise product with a constant matrix (masks). No gradient flows
    /// into the constant.
    pub fn mul_const(&mut self, x: Var, m: Rc<Matrix<T>>) -> Result<Var> {
        if self.shape(x) != m.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "mul_const",
                left: self.shape(x),
                right: m.shape(),
            });
        }
        let value = self.nodes[x.0].value.zip_map(&m, |a, b| a * b);
        Ok(self.push(value, Op::MulConst(x, m)))
    }

    /// Add a constant matrix (positional encodings, attention masks).
    pub fn add_const(&mut self, x: Var, m: &Matrix<T>) -> Result<Var> {
        if self.shape(x) != m.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "add_const",
                left: self.shape(x),
                right: m.shape(),
            });
        }
        let c = self.leaf(m.clone());
        self.add(x, c)
    }

    /// Transposed 2-D convolution. Input `[in_channels x in_h*in_w]`, weight
    /// `[in_channels x out_channels*k*k]`, output
    /// `[out_channels x out_h*out_w]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, spec: ConvTSpec) -> Result<Var> {
        let xs = self.shape(x);
        if xs != (spec.in_channels, spec.in_h * spec.in_w) {
            return Err(CoreError::ShapeMismatch {
                op: "conv_transpose2d input",
                left: xs,
                right: (spec.in_channels, spec.in_h * spec.in_w),
            });
        }
        let ws = self.shape(w);
        if ws != spec.weight_shape() {
            return Err(CoreError::ShapeMismatch {
                op: "conv_transpose2d weight",
                left: ws,
                right: spec.weight_shape(),
            });
        }
        let value = convt_forward(&self.nodes[x.0].value, &self.nodes[w.0].value, &spec);
        Ok(self.push(value, Op::ConvT2d { x, w, spec }))
    }

    /// Reverse pass from a scalar (`1 x 1`) loss. Single-shot per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(CoreError::BackwardSpent);
        }
        if self.shape(loss) != (1, 1) {
            return Err(CoreError::ShapeMismatch {
                op: "backward (loss must be scalar)",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        self.spent = true;
        for node in &mut self.nodes {
            let (r, c) = node.value.shape();
            node.grad = Some(Matrix::zeros(r, c));
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[(0, 0)] = T::ONE;

        for idx in (0..self.nodes.len()).rev() {
            let g = match &self.nodes[idx].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backprop_node(idx, &g);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, delta: &Matrix<T>) {
        self.nodes[v.0].grad.as_mut().unwrap().add_assign_mat(delta);
    }

    fn backprop_node(&mut self, idx: usize, g: &Matrix<T>) {
        // Ops are cheap to describe; clone the description so `self` stays
        // free for gradient writes.
        let op = match &self.nodes[idx].op {
            Op::Leaf => return,
            Op::ConcatCols(vs) => Op::ConcatCols(vs.clone()),
            Op::ConcatRows(vs) => Op::ConcatRows(vs.clone()),
            Op::MulConst(v, m) => Op::MulConst(*v, Rc::clone(m)),
            Op::MatMul(a, b) => Op::MatMul(*a, *b),
            Op::Transpose(a) => Op::Transpose(*a),
            Op::Add(a, b) => Op::Add(*a, *b),
            Op::Sub(a, b) => Op::Sub(*a, *b),
            Op::Mul(a, b) => Op::Mul(*a, *b),
            Op::AddRow(a, b) => Op::AddRow(*a, *b),
            Op::AddCol(a, b) => Op::AddCol(*a, *b),
            Op::Scale(a, s) => Op::Scale(*a, *s),
            Op::Relu(a) => Op::Relu(*a),
            Op::Sigmoid(a) => Op::Sigmoid(*a),
            Op::Tanh(a) => Op::Tanh(*a),
            Op::Sin(a) => Op::Sin(*a),
            Op::Cos(a) => Op::Cos(*a),
            Op::RowSoftmax(a) => Op::RowSoftmax(*a),
            Op::LayerNorm { x, gain, bias } => Op::LayerNorm {
                x: *x,
                gain: *gain,
                bias: *bias,
            },
            Op::SliceCols { x, start } => Op::SliceCols {
                x: *x,
                start: *start,
            },
            Op::SliceRows { x, start } => Op::SliceRows {
                x: *x,
                start: *start,
            },
            Op::Reshape(a) => Op::Reshape(*a),
            Op::SumAll(a) => Op::SumAll(*a),
            Op::ConvT2d { x, w, spec } => Op::ConvT2d {
                x: *x,
                w: *w,
                spec: *spec,
            },
        };

        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(&self.nodes[b.0].value);
                let db = self.nodes[a.0].value.matmul_tn(g);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Transpose(a) => {
                let da = g.transpose();
                self.add_grad(a, &da);
            }
            Op::Add(a, b) => {
                self.add_grad(a, g);
                self.add_grad(b, g);
            }
            Op::Sub(a, b) => {
                self.add_grad(a, g);
                let neg = g.map(|x| -x);
                self.add_grad(b, &neg);
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(&self.nodes[b.0].value, |x, y| x * y);
                let db = g.zip_map(&self.nodes[a.0].value, |x, y| x * y);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::AddRow(a, row) => {
                self.add_grad(a, g);
                let (n, d) = g.shape();
                let mut dr = Matrix::zeros(1, d);
                for r in 0..n {
                    for (acc, &v) in dr.row_mut(0).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                self.add_grad(row, &dr);
            }
            Op::AddCol(a, col) => {
                self.add_grad(a, g);
                let (n, _) = g.shape();
                let mut dc = Matrix::zeros(n, 1);
                for r in 0..n {
                    let mut acc = T::ZERO;
                    for &v in g.row(r) {
                        acc += v;
                    }
                    dc[(r, 0)] = acc;
                }
                self.add_grad(col, &dc);
            }
            Op::Scale(a, s) => {
                let da = g.map(|x| x * s);
                self.add_grad(a, &da);
            }
            Op::Relu(a) => {
                let da = g.zip_map(&self.nodes[a.0].value, |gv, x| {
                    if x > T::ZERO {
                        gv
                    } else {
                        T::ZERO
                    }
                });
                self.add_grad(a, &da);
            }
            Op::Sigmoid(a) => {
                let da = g.zip_map(&self.nodes[idx].value, |gv, y| gv * y * (T::ONE - y));
                self.add_grad(a, &da);
            }
            Op::Tanh(a) => {
                let da = g.zip_map(&self.nodes[idx].value, |gv, y| gv * (T::ONE - y * y));
                self.add_grad(a, &da);
            }
            Op::Sin(a) => {
                let da = g.zip_map(&self.nodes[a.0].value, |gv, x| gv * x.cos());
                self.add_grad(a, &da);
            }
            Op::Cos(a) => {
                let da = g.zip_map(&self.nodes[a.0].value, |gv, x| -(gv * x.sin()));
                self.add_grad(a, &da);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let (n, d) = y.shape();
                let mut da = Matrix::zeros(n, d);
                for r in 0..n {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let mut dot = T::ZERO;
                    for c in 0..d {
                        dot += yr[c] * gr[c];
                    }
                    let out = da.row_mut(r);
                    for c in 0..d {
                        out[c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.add_grad(a, &da);
            }
            Op::LayerNorm { x, gain, bias } => {
                let (n, d) = g.shape();
                let mut dx = Matrix::zeros(n, d);
                let mut dgain = Matrix::zeros(1, d);
                let mut dbias = Matrix::zeros(1, d);
                let inv_d = T::ONE / T::from_f64(d as f64);
                for r in 0..n {
                    let row = self.nodes[x.0].value.row(r);
                    let (mean, inv) = row_moments(row);
                    let gain = self.nodes[gain.0].value.row(0);
                    let gr = g.row(r);
                    // dxh = dy * gain; dx = inv*(dxh - mean(dxh) - xh*mean(dxh*xh))
                    let mut mean_dxh = T::ZERO;
                    let mut mean_dxh_xh = T::ZERO;
                    for c in 0..d {
                        let xh = (row[c] - mean) * inv;
                        let dxh = gr[c] * gain[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh;
                        dgain.row_mut(0)[c] += gr[c] * xh;
                        dbias.row_mut(0)[c] += gr[c];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    let out = dx.row_mut(r);
                    for c in 0..d {
                        let xh = (row[c] - mean) * inv;
                        let dxh = gr[c] * gain[c];
                        out[c] = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                    }
                }
                self.add_grad(x, &dx);
                self.add_grad(gain, &dgain);
                self.add_grad(bias, &dbias);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (n, c) = self.shape(p);
                    let mut dp = Matrix::zeros(n, c);
                    for r in 0..n {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                    }
                    self.add_grad(p, &dp);
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, d) = self.shape(p);
                    let mut dp = Matrix::zeros(r, d);
                    for i in 0..r {
                        dp.row_mut(i).copy_from_slice(g.row(off + i));
                    }
                    self.add_grad(p, &dp);
                    off += r;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, d) = self.shape(x);
                let (_, len) = g.shape();
                let mut dx = Matrix::zeros(n, d);
                for r in 0..n {
                    dx.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                }
                self.add_grad(x, &dx);
            }
            Op::SliceRows { x, start } => {
                let (n, d) = self.shape(x);
                let (len, _) = g.shape();
                let mut dx = Matrix::zeros(n, d);
                for r in 0..len {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.add_grad(x, &dx);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(a);
                let da = Matrix::from_vec(r, c, g.data().to_vec());
                self.add_grad(a, &da);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(a);
                let da = Matrix::filled(r, c, g[(0, 0)]);
                self.add_grad(a, &da);
            }
            Op::MulConst(a, m) => {
                let da = g.zip_map(&m, |x, y| x * y);
                self.add_grad(a, &da);
            }
            Op::ConvT2d { x, w, spec } => {
                let (dx, dw) =
                    convt_backward(&self.nodes[x.0].value, &self.nodes[w.0].value, g, &spec);
                self.add_grad(x, &dx);
                self.add_grad(w, &dw);
            }
        }
    }
}

/// Mean and inverse standard deviation (biased variance, `eps = 1e-5`).
fn row_moments<T: Real>(row: &[T]) -> (T, T) {
    let d = T::from_f64(row.len() as f64);
    let mut mean = T::ZERO;
    for &v in row {
        mean += v;
    }
    mean = mean / d;
    let mut var = T::ZERO;
    for &v in row {
        let c = v - mean;
        var += c * c;
    }
    var = var / d;
    let inv = T::ONE / (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
    (mean, inv)
}

fn convt_forward<T: Real>(x: &Matrix<T>, w: &Matrix<T>, spec: &ConvTSpec) -> Matrix<T> {
    let (oh, ow) = (spec.out_h(), spec.out_w());
    let k = spec.kernel;
    let mut out = Matrix::zeros(spec.out_channels, oh * ow);
    for ci in 0..spec.in_channels {
        for i in 0..spec.in_h {
            for j in 0..spec.in_w {
                let xv = x[(ci, i * spec.in_w + j)];
                if xv == T::ZERO {
                    continue;
                }
                for co in 0..spec.out_channels {
                    for ki in 0..k {
                        let oi = (i * spec.stride + ki).wrapping_sub(spec.pad);
                        if oi >= oh {
                            continue;
                        }
                        for kj in 0..k {
                            let oj = (j * spec.stride + kj).wrapping_sub(spec.pad);
                            if oj >= ow {
                                continue;
                            }
                            let wv = w[(ci, (co * k + ki) * k + kj)];
                            out[(co, oi * ow + oj)] += xv * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn convt_backward<T: Real>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    g: &Matrix<T>,
    spec: &ConvTSpec,
) -> (Matrix<T>, Matrix<T>) {
    let (oh, ow) = (spec.out_h(), spec.out_w());
    let k = spec.kernel;
    let mut dx = Matrix::zeros(spec.in_channels, spec.in_h * spec.in_w);
    let mut dw = Matrix::zeros(spec.in_channels, spec.out_channels * k * k);
    for ci in 0..spec.in_channels {
        for i in 0..spec.in_h {
            for j in 0..spec.in_w {
                let xv = x[(ci, i * spec.in_w + j)];
                let mut acc = T::ZERO;
                for co in 0..spec.out_channels {
                    for ki in 0..k {
                        let oi = (i * spec.stride + ki).wrapping_sub(spec.pad);
                        if oi >= oh {
                            continue;
                        }
                        for kj in 0..k {
                            let oj = (j * spec.stride + kj).wrapping_sub(spec.pad);
                            if oj >= ow {
                                continue;
                            }
                            let gv = g[(co, oi * ow + oj)];
                            let widx = (co * k + ki) * k + kj;
                            acc += gv * w[(ci, widx)];
                            dw[(ci, widx)] += gv * xv;
                        }
                    }
                }
                dx[(ci, i * spec.in_w + j)] = acc;
            }
        }
    }
    (dx, dw)
}
