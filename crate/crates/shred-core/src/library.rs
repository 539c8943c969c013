//! Candidate-function libraries for sparse latent dynamics.
//!
//! A [`LibrarySpec`] maps a latent row `z` of width `k` to a feature row
//! `theta(z)` with a frozen column order:
//!
//! 1. constant `1` (if `include_bias`),
//! 2. polynomials degree 1..=`poly_order`, each degree's monomials in
//!    lexicographic order of their non-decreasing index sequences
//!    (for `k = 2`, degree 2: `z_0^2, z_0*z_1, z_1^2`),
//! 3. Fourier pairs for `j = 1..=fourier_k`: the `sin(j z)` block over all
//!    dims, then the `cos(j z)` block.
//!
//! The same enumeration drives the plain evaluator, the tape evaluator and
//! the printed column names, so they cannot drift apart. `poly_order = 1`
//! with a bias is the linear ("Koopman-style") library.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mat::Matrix;
use crate::real::Real;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LibrarySpec {
    pub include_bias: bool,
    /// Highest monomial degree; at least 1.
    pub poly_order: u32,
    /// Number of Fourier frequencies (0 disables the trigonometric block).
    pub fourier_k: u32,
}

impl LibrarySpec {
    /// Bias plus linear terms only.
    pub fn linear() -> Self {
        LibrarySpec {
            include_bias: true,
            poly_order: 1,
            fourier_k: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.poly_order == 0 {
            return Err(CoreError::InvalidConfig(
                "library poly_order must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form column count:
    /// `bias + sum_d C(k+d-1, d) + 2 * fourier_k * k`.
    pub fn width(&self, k: usize) -> usize {
        let mut w = usize::from(self.include_bias);
        for d in 1..=self.poly_order as usize {
            w += n_multisets(k, d);
        }
        w += 2 * self.fourier_k as usize * k;
        w
    }

    /// Human-readable column names, aligned with the evaluators.
    pub fn column_names(&self, k: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width(k));
        if self.include_bias {
            names.push("1".into());
        }
        for mono in monomials(k, self.poly_order) {
            names.push(monomial_name(&mono));
        }
        for j in 1..=self.fourier_k {
            for i in 0..k {
                names.push(trig_name("sin", j, i));
            }
            for i in 0..k {
                names.push(trig_name("cos", j, i));
            }
        }
        names
    }
}

/// Number of multisets of size `d` from `k` symbols: `C(k+d-1, d)`.
fn n_multisets(k: usize, d: usize) -> usize {
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 0..d {
        num *= k + i;
        den *= i + 1;
    }
    num / den
}

/// All monomials of degree 1..=`poly_order` over `k` variables, each one a
/// non-decreasing index sequence, ordered by degree then lexicographically.
pub fn monomials(k: usize, poly_order: u32) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut level: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    out.extend(level.iter().cloned());
    for _ in 2..=poly_order {
        let mut next = Vec::new();
        for m in &level {
            let last = *m.last().unwrap();
            for j in last..k {
                let mut e = m.clone();
                e.push(j);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        level = next;
    }
    out
}

fn monomial_name(indices: &[usize]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut i = 0;
    while i < indices.len() {
        let var = indices[i];
        let mut e = 0;
        while i < indices.len() && indices[i] == var {
            e += 1;
            i += 1;
        }
        if e == 1 {
            parts.push(format!("z_{var}"));
        } else {
            parts.push(format!("z_{var}^{e}"));
        }
    }
    parts.join("·")
}

fn trig_name(func: &str, j: u32, i: usize) -> String {
    if j == 1 {
        format!("{func}(z_{i})")
    } else {
        format!("{func}({j}·z_{i})")
    }
}

/// Evaluate the library on each row of `z` (`[n x k]` -> `[n x width]`).
pub fn eval_library<T: Real>(z: &Matrix<T>, spec: &LibrarySpec) -> Matrix<T> {
    let (n, k) = z.shape();
    let monos = monomials(k, spec.poly_order);
    let mut out = Matrix::zeros(n, spec.width(k));
    for r in 0..n {
        let row = z.row(r);
        let dst = out.row_mut(r);
        let mut c = 0;
        if spec.include_bias {
            dst[c] = T::ONE;
            c += 1;
        }
        for mono in &monos {
            let mut v = T::ONE;
            for &i in mono {
                v *= row[i];
            }
            dst[c] = v;
            c += 1;
        }
        for j in 1..=spec.fourier_k {
            let jf = T::from_f64(j as f64);
            for &zi in row.iter().take(k) {
                dst[c] = (jf * zi).sin();
                c += 1;
            }
            for &zi in row.iter().take(k) {
                dst[c] = (jf * zi).cos();
                c += 1;
            }
        }
        debug_assert_eq!(c, dst.len());
    }
    out
}

/// Tape version of [`eval_library`]; gradients flow back into `z`.
pub fn eval_library_tape<T: Real>(tape: &mut Tape<T>, z: Var, spec: &LibrarySpec) -> Result<Var> {
    let (n, k) = tape.value(z).shape();
    let mut parts: Vec<Var> = Vec::new();
    if spec.include_bias {
        parts.push(tape.leaf(Matrix::filled(n, 1, T::ONE)));
    }

    // Columns of z, reused by every monomial.
    let cols: Vec<Var> = (0..k)
        .map(|i| tape.slice_cols(z, i, 1))
        .collect::<Result<_>>()?;

    // Build each degree level from the previous one so common prefixes share
    // subgraphs: a degree-d monomial is (degree-(d-1) prefix) * (last col).
    let mut level: Vec<(usize, Var)> = cols.iter().copied().enumerate().collect();
    parts.extend(level.iter().map(|&(_, v)| v));
    for _ in 2..=spec.poly_order {
        let mut next = Vec::new();
        for &(last, prev) in &level {
            for (j, &cj) in cols.iter().enumerate().skip(last) {
                let m = tape.mul(prev, cj)?;
                next.push((j, m));
            }
        }
        parts.extend(next.iter().map(|&(_, v)| v));
        level = next;
    }

    for j in 1..=spec.fourier_k {
        let scaled = if j == 1 {
            z
        } else {
            tape.scale(z, T::from_f64(j as f64))
        };
        parts.push(tape.sin(scaled));
        parts.push(tape.cos(scaled));
    }

    tape.concat_cols(&parts)
}
