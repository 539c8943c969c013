//! Finite-difference gradient checking.
//!
//! [`grad_check`] rebuilds the same graph many times: once for the analytic
//! reverse pass, then twice per scalar entry for central differences. The
//! closure must therefore be a pure function of the leaf values it is
//! handed. Comparison is per entry with the relative measure
//! `|a - n| / max(|n|, floor)`, so a backward pass that is wrong by a factor
//! of two reports an error of about one, and near-zero pairs below the
//! absolute floor auto-pass instead of amplifying round-off.
//!
//! At 64 bits with the default step `1e-5`, correct gradients land around
//! `1e-9`; the conventional acceptance threshold is `1e-4`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mat::Matrix;
use crate::real::Real;
use crate::rng::Pcg32;
use crate::tape::{Tape, Var};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Default acceptance threshold on the relative error (64-bit).
pub const DEFAULT_TOL: f64 = 1e-4;
/// Pairs where both |analytic| and |numeric| are below this auto-pass.
pub const ABS_FLOOR: f64 = 1e-7;
/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Per-leaf outcome.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel: f64,
    pub max_abs: f64,
    /// Flat index of the worst entry, for debugging.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel))
    }
}

/// Relative error between analytic and numeric gradient entries.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < ABS_FLOOR && numeric.abs() < ABS_FLOOR {
        return 0.0;
    }
    (analytic - numeric).abs() / numeric.abs().max(REL_FLOOR)
}

/// Compare two gradient sets produced elsewhere; used both internally and to
/// test the checker itself against planted faults.
pub fn compare_grads(analytic: &Matrix<f64>, numeric: &Matrix<f64>) -> (f64, f64, usize) {
    debug_assert_eq!(analytic.shape(), numeric.shape());
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = 0;
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let rel = rel_error(a, n);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
        max_abs = max_abs.max((a - n).abs());
    }
    (max_rel, max_abs, worst)
}

/// Check a differentiable block against central finite differences.
///
/// `shapes` names and sizes the leaves; values are drawn uniform in
/// `[-1, 1)` from `seed`. `f` must return a scalar (`1 x 1`) loss var.
pub fn grad_check<T, F>(
    shapes: &[(&str, usize, usize)],
    seed: u64,
    eps: f64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut rng = Pcg32::new(seed);
    let inputs: Vec<Matrix<T>> = shapes
        .iter()
        .map(|&(_, r, c)| Matrix::from_fn(r, c, |_, _| rng.uniform(T::from_f64(-1.0), T::ONE)))
        .collect();
    grad_check_at(shapes, &inputs, eps, tol, f)
}

/// Like [`grad_check`] but at caller-chosen input values.
pub fn grad_check_at<T, F>(
    shapes: &[(&str, usize, usize)],
    inputs: &[Matrix<T>],
    eps: f64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    assert_eq!(shapes.len(), inputs.len());

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).shape() != (1, 1) {
        return Err(CoreError::ShapeMismatch {
            op: "grad_check (loss must be scalar)",
            left: tape.value(loss).shape(),
            right: (1, 1),
        });
    }
    if !tape.value(loss)[(0, 0)].to_f64().is_finite() {
        return Err(CoreError::NonFinite(
            "grad_check: loss non-finite at the base point".to_string(),
        ));
    }
    tape.backward(loss)?;
    let analytic: Vec<Matrix<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).unwrap().convert::<f64>())
        .collect();
    drop(tape);

    // Numeric pass: central differences, one entry at a time.
    let mut report = GradCheckReport {
        entries: Vec::new(),
        tol,
        passed: true,
    };
    let mut probe: Vec<Matrix<T>> = inputs.to_vec();
    for (li, &(name, r, c)) in shapes.iter().enumerate() {
        let mut numeric = Matrix::<f64>::zeros(r, c);
        for idx in 0..r * c {
            let orig = probe[li].data()[idx];
            let step = T::from_f64(eps);

            probe[li].data_mut()[idx] = orig + step;
            let plus = forward_only(&probe, &f)?;
            probe[li].data_mut()[idx] = orig - step;
            let minus = forward_only(&probe, &f)?;
            probe[li].data_mut()[idx] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(CoreError::NonFinite(alloc::format!(
                    "grad_check: non-finite loss probing {name}[{idx}]"
                )));
            }
            numeric.data_mut()[idx] = (plus - minus) / (2.0 * eps);
        }
        let (max_rel, max_abs, worst) = compare_grads(&analytic[li], &numeric);
        if max_rel >= tol {
            report.passed = false;
        }
        report.entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel,
            max_abs,
            worst_index: worst,
        });
    }
    Ok(report)
}

fn forward_only<T, F>(points: &[Matrix<T>], f: &F) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss)[(0, 0)].to_f64())
}

/// Reduce an arbitrary matrix var to a scalar with a fixed random weighting,
/// so gradient checks exercise generic directions of the output.
pub fn scalar_probe<T: Real>(tape: &mut Tape<T>, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(v).shape();
    let mut rng = Pcg32::new(seed ^ 0x5CA1_AB1E);
    let weights = Matrix::from_fn(r, c, |_, _| rng.uniform(T::from_f64(-1.0), T::ONE));
    let weighted = tape.mul_const(v, alloc::rc::Rc::new(weights))?;
    Ok(tape.sum_all(weighted))
}
