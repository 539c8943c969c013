//! Sparse latent dynamics: coefficients, Euler rollouts, the consistency
//! loss, scheduled pruning, and symbolic extraction.
//!
//! A latent system is `dz/dt = theta(z) Xi` with `theta` drawn from a
//! [`LibrarySpec`] and `Xi` a `[width x k]` coefficient matrix. One sample
//! interval is integrated by `k_steps` explicit-Euler sub-steps of size
//! `h_step`. Pruning zeroes small coefficients *and* masks them so they stay
//! zero: masked entries receive no gradient (the mask multiplies the
//! coefficient leaf on the tape) and are excluded from the L2 penalty.
//! Pruning is monotone — a masked entry is never revived — and idempotent.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::library::{eval_library, eval_library_tape, LibrarySpec};
use crate::mat::Matrix;
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Coefficients of one latent system, with the pruning mask and the Euler
/// discretization it was trained under. `h_step` is the sub-step size: one
/// sample interval is `k_steps * h_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct SindyCoefficients<T: Real> {
    pub xi: Matrix<T>,
    /// Row-major over `xi`'s shape; `false` = pruned (entry pinned at zero).
    pub mask: Vec<bool>,
    pub h_step: f64,
    pub k_steps: usize,
}

impl<T: Real> SindyCoefficients<T> {
    pub fn new(xi: Matrix<T>, h_step: f64, k_steps: usize) -> Result<Self> {
        if k_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "k_steps must be at least 1".into(),
            ));
        }
        if !(h_step.is_finite() && h_step > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "h_step must be positive and finite, got {h_step}"
            )));
        }
        let mask = vec![true; xi.data().len()];
        Ok(SindyCoefficients {
            xi,
            mask,
            h_step,
            k_steps,
        })
    }

    /// Rebuild from stored parts (checkpoint restore). Masked entries are
    /// forced to zero to re-establish the invariant.
    pub fn from_parts(xi: Matrix<T>, mask: Vec<bool>, h_step: f64, k_steps: usize) -> Result<Self> {
        if mask.len() != xi.data().len() {
            return Err(CoreError::InvalidConfig(format!(
                "mask length {} does not match xi size {}",
                mask.len(),
                xi.data().len()
            )));
        }
        let mut c = Self::new(xi, h_step, k_steps)?;
        c.mask = mask;
        c.enforce_mask();
        Ok(c)
    }

    pub fn width(&self) -> usize {
        self.xi.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.xi.cols()
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Zero every masked entry (cheap; used after optimizer steps as a
    /// belt-and-braces guard).
    pub fn enforce_mask(&mut self) {
        for (v, &m) in self.xi.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = T::ZERO;
            }
        }
    }

    /// Mask entries with `|xi| < tau`. Returns how many entries were newly
    /// pruned. Never unmasks, so repeated calls are idempotent.
    pub fn prune(&mut self, tau: f64) -> usize {
        let mut newly = 0;
        for (v, m) in self.xi.data_mut().iter_mut().zip(self.mask.iter_mut()) {
            if *m && v.to_f64().abs() < tau {
                *m = false;
                *v = T::ZERO;
                newly += 1;
            }
        }
        newly
    }

    /// 0/1 matrix matching `xi`'s shape, for tape-side masking.
    pub fn mask_matrix(&self) -> Matrix<T> {
        let (r, c) = self.xi.shape();
        let mut m = Matrix::zeros(r, c);
        for (dst, &keep) in m.data_mut().iter_mut().zip(&self.mask) {
            *dst = if keep { T::ONE } else { T::ZERO };
        }
        m
    }
}

/// Advance one sample interval: `k_steps` explicit-Euler sub-steps of
/// `dz/dt = theta(z) Xi`. Fails with the sub-step index if the state goes
/// non-finite.
pub fn euler_rollout<T: Real>(
    z: &[T],
    coeffs: &SindyCoefficients<T>,
    spec: &LibrarySpec,
) -> Result<Vec<T>> {
    let k = coeffs.latent_dim();
    if z.len() != k {
        return Err(CoreError::ShapeMismatch {
            op: "euler_rollout",
            left: (1, z.len()),
            right: (1, k),
        });
    }
    let h = T::from_f64(coeffs.h_step);
    let mut cur = Matrix::row_vector(z);
    for step in 0..coeffs.k_steps {
        let theta = eval_library(&cur, spec);
        let dz = theta.matmul(&coeffs.xi);
        for (c, d) in cur.data_mut().iter_mut().zip(dz.data()) {
            *c += h * *d;
        }
        if !cur.all_finite() {
            return Err(CoreError::NonFinite(format!(
                "euler_rollout: state diverged at sub-step {step}"
            )));
        }
    }
    Ok(cur.data().to_vec())
}

/// Mean squared one-step rollout error over a trajectory:
/// `mean_t || z_{t+1} - rollout(z_t) ||^2`. Plain (non-tape) helper for
/// assessing extracted dynamics.
pub fn rollout_residual<T: Real>(
    traj: &Matrix<T>,
    coeffs: &SindyCoefficients<T>,
    spec: &LibrarySpec,
) -> Result<f64> {
    let (n, _) = traj.shape();
    if n < 2 {
        return Err(CoreError::TooShort {
            n_time: n,
            required: 2,
        });
    }
    let mut acc = 0.0;
    for t in 0..n - 1 {
        let pred = euler_rollout(traj.row(t), coeffs, spec)?;
        for (p, &y) in pred.iter().zip(traj.row(t + 1)) {
            let d = p.to_f64() - y.to_f64();
            acc += d * d;
        }
    }
    Ok(acc / (n - 1) as f64)
}

/// Build the SINDy consistency loss on a tape:
///
/// `mean_t || z_{t+1} - euler(z_t) ||^2 + lambda_reg * ||Xi_masked||^2`.
///
/// `xi_masked` must already have the pruning mask applied (see
/// [`masked_xi_var`]), which is also what excludes masked entries from the
/// penalty and zeroes their gradients.
pub fn sindy_loss_graph<T: Real>(
    tape: &mut Tape<T>,
    traj: Var,
    xi_masked: Var,
    spec: &LibrarySpec,
    h_step: f64,
    k_steps: usize,
    lambda_reg: f64,
) -> Result<Var> {
    let (n, _k) = tape.value(traj).shape();
    if n < 2 {
        return Err(CoreError::TooShort {
            n_time: n,
            required: 2,
        });
    }
    let z_t = tape.slice_rows(traj, 0, n - 1)?;
    let z_next = tape.slice_rows(traj, 1, n - 1)?;

    let h = T::from_f64(h_step);
    let mut cur = z_t;
    for _ in 0..k_steps {
        let theta = eval_library_tape(tape, cur, spec)?;
        let dz = tape.matmul(theta, xi_masked)?;
        let scaled = tape.scale(dz, h);
        cur = tape.add(cur, scaled)?;
    }

    let res = tape.sub(z_next, cur)?;
    let sq = tape.mul(res, res)?;
    let sum = tape.sum_all(sq);
    let mut loss = tape.scale(sum, T::ONE / T::from_f64((n - 1) as f64));

    if lambda_reg != 0.0 {
        let xi_sq = tape.mul(xi_masked, xi_masked)?;
        let reg = tape.sum_all(xi_sq);
        let reg = tape.scale(reg, T::from_f64(lambda_reg));
        loss = tape.add(loss, reg)?;
    }
    Ok(loss)
}

/// Put a coefficient matrix on the tape with its pruning mask applied.
/// Returns `(raw leaf, masked var)`; gradients read from the leaf are
/// exactly zero at masked entries.
pub fn masked_xi_var<T: Real>(
    tape: &mut Tape<T>,
    coeffs: &SindyCoefficients<T>,
) -> Result<(Var, Var)> {
    let leaf = tape.leaf(coeffs.xi.clone());
    let masked = tape.mul_const(leaf, alloc::rc::Rc::new(coeffs.mask_matrix()))?;
    Ok((leaf, masked))
}

/// Value of the SINDy loss at the current coefficients (builds a throwaway
/// graph so the math path is identical to training).
pub fn sindy_loss<T: Real>(
    traj: &Matrix<T>,
    coeffs: &SindyCoefficients<T>,
    spec: &LibrarySpec,
    lambda_reg: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let traj_var = tape.leaf(traj.clone());
    let (_, masked) = masked_xi_var(&mut tape, coeffs)?;
    let loss = sindy_loss_graph(
        &mut tape,
        traj_var,
        masked,
        spec,
        coeffs.h_step,
        coeffs.k_steps,
        lambda_reg,
    )?;
    Ok(tape.value(loss)[(0, 0)].to_f64())
}

// ---------------------------------------------------------------------------
// Symbolic form.

/// One additive term `coeff * monomial` of an equation.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    /// Library column name; `"1"` for the constant term.
    pub monomial: String,
}

/// `dz_lhs/dt = sum(terms)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub lhs: usize,
    pub terms: Vec<Term>,
}

/// Extracted dynamics of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSystem {
    pub layer: usize,
    pub head: usize,
    pub equations: Vec<Equation>,
}

/// Every per-head system of a model, in layer-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicSystem {
    pub systems: Vec<HeadSystem>,
}

/// Printed coefficient precision (decimal places).
pub const PRINT_PRECISION: usize = 3;

/// Round to the printed precision, for round-trip comparisons.
pub fn round_printed(c: f64) -> f64 {
    let mut s = 1.0f64;
    for _ in 0..PRINT_PRECISION {
        s *= 10.0;
    }
    // Half-away-from-zero, matching how `{:.3}` formats; integer casts are
    // fine at coefficient magnitudes.
    let x = c * s;
    let r = if x >= 0.0 {
        (x + 0.5) as i64 as f64
    } else {
        -((-x + 0.5) as i64 as f64)
    };
    r / s
}

impl HeadSystem {
    /// Read the active (unpruned) terms out of a coefficient matrix.
    pub fn from_coefficients<T: Real>(
        layer: usize,
        head: usize,
        coeffs: &SindyCoefficients<T>,
        spec: &LibrarySpec,
    ) -> Self {
        let names = spec.column_names(coeffs.latent_dim());
        debug_assert_eq!(names.len(), coeffs.width());
        let k = coeffs.latent_dim();
        let mut equations = Vec::with_capacity(k);
        for a in 0..k {
            let mut terms = Vec::new();
            for (row, name) in names.iter().enumerate() {
                if coeffs.mask[row * k + a] {
                    terms.push(Term {
                        coeff: coeffs.xi[(row, a)].to_f64(),
                        monomial: name.clone(),
                    });
                }
            }
            equations.push(Equation { lhs: a, terms });
        }
        HeadSystem {
            layer,
            head,
            equations,
        }
    }

    /// Rebuild a coefficient matrix (and mask) from the symbolic form. Terms
    /// map back through the library's column names; anything unknown is an
    /// error.
    pub fn to_coefficients(
        &self,
        spec: &LibrarySpec,
        k: usize,
    ) -> Result<(Matrix<f64>, Vec<bool>)> {
        let names = spec.column_names(k);
        let width = names.len();
        let mut xi = Matrix::<f64>::zeros(width, k);
        let mut mask = vec![false; width * k];
        for eq in &self.equations {
            if eq.lhs >= k {
                return Err(CoreError::Parse(format!(
                    "equation lhs z_{} out of range for k={k}",
                    eq.lhs
                )));
            }
            for term in &eq.terms {
                let row = names
                    .iter()
                    .position(|n| *n == term.monomial)
                    .ok_or_else(|| {
                        CoreError::Parse(format!("unknown library term {:?}", term.monomial))
                    })?;
                xi[(row, eq.lhs)] = term.coeff;
                mask[row * k + eq.lhs] = true;
            }
        }
        Ok((xi, mask))
    }
}

impl SymbolicSystem {
    /// Pretty-print all systems, e.g.
    ///
    /// ```text
    /// L_0 H_0:
    ///   ż_0 = -0.699·z_0 + 0.275·z_2
    ///   ż_1 = 0.539 - 0.382·z_0 + 0.746·z_1 - 0.257·z_2
    /// ```
    ///
    /// Coefficients carry three decimal places; an equation whose terms are
    /// all pruned prints as `ż_a = 0`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (si, sys) in self.systems.iter().enumerate() {
            if si > 0 {
                out.push('\n');
            }
            out.push_str(&format!("L_{} H_{}:\n", sys.layer, sys.head));
            for eq in &sys.equations {
                out.push_str(&format!("  ż_{} = {}\n", eq.lhs, render_rhs(&eq.terms)));
            }
        }
        out
    }

    /// Parse text produced by [`SymbolicSystem::render_text`].
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut systems: Vec<HeadSystem> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("L_") {
                // "L_<i> H_<j>:"
                let rest = rest.strip_suffix(':').ok_or_else(|| {
                    CoreError::Parse(format!("line {}: missing ':' in header", lineno + 1))
                })?;
                let (layer_s, head_s) = rest.split_once(" H_").ok_or_else(|| {
                    CoreError::Parse(format!("line {}: malformed header", lineno + 1))
                })?;
                let layer = parse_usize(layer_s.trim(), lineno)?;
                let head = parse_usize(head_s.trim(), lineno)?;
                systems.push(HeadSystem {
                    layer,
                    head,
                    equations: Vec::new(),
                });
            } else if let Some(rest) = line.strip_prefix("ż_") {
                let sys = systems.last_mut().ok_or_else(|| {
                    CoreError::Parse(format!("line {}: equation before any header", lineno + 1))
                })?;
                let (lhs_s, rhs) = rest
                    .split_once('=')
                    .ok_or_else(|| CoreError::Parse(format!("line {}: missing '='", lineno + 1)))?;
                let lhs = parse_usize(lhs_s.trim(), lineno)?;
                sys.equations.push(Equation {
                    lhs,
                    terms: parse_rhs(rhs.trim(), lineno)?,
                });
            } else {
                return Err(CoreError::Parse(format!(
                    "line {}: expected 'L_i H_j:' or 'ż_a = ...', got {line:?}",
                    lineno + 1
                )));
            }
        }
        Ok(SymbolicSystem { systems })
    }
}

fn render_rhs(terms: &[Term]) -> String {
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, term) in terms.iter().enumerate() {
        let c = term.coeff;
        let mag = format!("{:.prec$}", c.abs(), prec = PRINT_PRECISION);
        if i == 0 {
            if c < 0.0 {
                out.push('-');
            }
        } else if c < 0.0 {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        if term.monomial == "1" {
            out.push_str(&mag);
        } else {
            out.push_str(&format!("{mag}·{}", term.monomial));
        }
    }
    out
}

fn parse_rhs(rhs: &str, lineno: usize) -> Result<Vec<Term>> {
    if rhs == "0" {
        return Ok(Vec::new());
    }
    let mut terms = Vec::new();
    // Tokenize on " + " / " - ", keeping a possible leading '-'.
    let mut rest = rhs;
    let mut sign = 1.0;
    if let Some(r) = rest.strip_prefix('-') {
        sign = -1.0;
        rest = r;
    }
    loop {
        let (chunk, next) = match (rest.find(" + "), rest.find(" - ")) {
            (Some(p), Some(m)) if p < m => (&rest[..p], Some((1.0, &rest[p + 3..]))),
            (Some(_), Some(m)) => (&rest[..m], Some((-1.0, &rest[m + 3..]))),
            (Some(p), None) => (&rest[..p], Some((1.0, &rest[p + 3..]))),
            (None, Some(m)) => (&rest[..m], Some((-1.0, &rest[m + 3..]))),
            (None, None) => (rest, None),
        };
        let chunk = chunk.trim();
        let (mag_s, monomial) = match chunk.split_once('·') {
            Some((m, rest_mono)) => (m, rest_mono.to_string()),
            None => (chunk, "1".to_string()),
        };
        let mag: f64 = mag_s.trim().parse().map_err(|_| {
            CoreError::Parse(format!("line {}: bad coefficient {mag_s:?}", lineno + 1))
        })?;
        terms.push(Term {
            coeff: sign * mag,
            monomial,
        });
        match next {
            Some((s, r)) => {
                sign = s;
                rest = r;
            }
            None => break,
        }
    }
    Ok(terms)
}

fn parse_usize(s: &str, lineno: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| CoreError::Parse(format!("line {}: bad index {s:?}", lineno + 1)))
}
