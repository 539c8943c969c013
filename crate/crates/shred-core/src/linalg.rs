//! Dense linear algebra for the reduced-order-model pipeline: thin
//! Householder QR, one-sided Jacobi SVD, a randomized truncated SVD, and a
//! matrix exponential.
//!
//! Everything here runs in `f64` regardless of the model precision — ROM
//! bases are computed once per dataset and accuracy matters more than
//! speed. The Jacobi SVD gives full relative accuracy on the small
//! projected factor, which keeps the randomized SVD's error dominated by
//! the range-finder (driven down by power iterations) rather than by the
//! dense kernel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mat::Matrix;
use crate::real::Real;
use crate::rng::Pcg32;

/// Singular value decomposition `a = u * diag(s) * v^T` with orthonormal
/// columns in `u` and `v` and `s` sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix<f64>,
    pub s: Vec<f64>,
    pub v: Matrix<f64>,
}

/// Default oversampling added to the target rank by [`rsvd`].
pub const DEFAULT_OVERSAMPLE: usize = 10;
/// Default number of power iterations used by [`rsvd`].
pub const DEFAULT_POWER_ITERS: usize = 2;

const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Thin Q factor of a tall matrix (`m >= n`) via Householder reflections:
/// returns `q` `[m x n]` with orthonormal columns spanning `range(a)`.
pub fn qr_thin_q(a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(CoreError::InvalidConfig(
            "qr_thin_q needs a tall matrix (rows >= cols)".into(),
        ));
    }
    let mut r = a.clone();
    // Householder vectors, one per column, stored over the eliminated part.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut taus = vec![0.0f64; n];

    for k in 0..n {
        let mut norm2 = 0.0;
        for i in k..m {
            norm2 += r[(i, k)] * r[(i, k)];
        }
        let norm = Real::sqrt(norm2);
        let mut v = vec![0.0f64; m - k];
        if norm == 0.0 {
            vs.push(v);
            continue;
        }
        let x0 = r[(k, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        v[0] = x0 - alpha;
        for i in k + 1..m {
            v[i - k] = r[(i, k)];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            vs.push(v);
            continue;
        }
        let tau = 2.0 / vnorm2;
        // Apply H = I - tau v v^T to the trailing block of r.
        for j in k..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * r[(i, j)];
            }
            let scale = tau * dot;
            for i in k..m {
                r[(i, j)] -= scale * v[i - k];
            }
        }
        taus[k] = tau;
        vs.push(v);
    }

    // Accumulate Q = H_0 ... H_{n-1} applied to the thin identity.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for k in (0..n).rev() {
        let tau = taus[k];
        if tau == 0.0 {
            continue;
        }
        let v = &vs[k];
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * q[(i, j)];
            }
            let scale = tau * dot;
            for i in k..m {
                q[(i, j)] -= scale * v[i - k];
            }
        }
    }
    Ok(q)
}

/// Full SVD by one-sided Jacobi rotations (Hestenes). Orientation is
/// handled internally: wide inputs are transposed and the factors swapped.
pub fn svd_jacobi(a: &Matrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    if !a.all_finite() {
        return Err(CoreError::NonFinite("svd input".into()));
    }
    if m < n {
        let t = svd_jacobi(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }

    // Orthogonalize the columns of w in place; v accumulates rotations.
    let mut w = a.clone();
    let mut v = Matrix::<f64>::eye(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * Real::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + Real::sqrt(1.0 + zeta * zeta))
                } else {
                    -1.0 / (-zeta + Real::sqrt(1.0 + zeta * zeta))
                };
                let c = 1.0 / Real::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; normalize to get U.
    let mut order: Vec<usize> = (0..n).collect();
    let mut sigmas = vec![0.0f64; n];
    for (j, sig) in sigmas.iter_mut().enumerate() {
        let mut norm2 = 0.0;
        for i in 0..m {
            norm2 += w[(i, j)] * w[(i, j)];
        }
        *sig = Real::sqrt(norm2);
    }
    order.sort_by(|&x, &y| sigmas[y].partial_cmp(&sigmas[x]).unwrap());

    let mut u = Matrix::zeros(m, n);
    let mut vs = Matrix::zeros(n, n);
    let mut s = vec![0.0f64; n];
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = sigmas[src];
        if sigmas[src] > 0.0 {
            for i in 0..m {
                u[(i, dst)] = w[(i, src)] / sigmas[src];
            }
        }
        for i in 0..n {
            vs[(i, dst)] = v[(i, src)];
        }
    }
    Ok(Svd { u, s, v: vs })
}

/// Randomized truncated SVD: Gaussian sketch, QR range finder with
/// `n_power_iters` subspace iterations, then an exact Jacobi SVD of the
/// small projected factor. Returns the leading `rank` triplets.
///
/// The sketch width is `rank + oversample`, clamped to `min(m, n)`; asking
/// for `rank > min(m, n)` is an error.
pub fn rsvd(
    a: &Matrix<f64>,
    rank: usize,
    oversample: usize,
    n_power_iters: usize,
    seed: u64,
) -> Result<Svd> {
    let (m, n) = a.shape();
    let limit = m.min(n);
    if rank == 0 {
        return Err(CoreError::InvalidConfig("rsvd needs rank >= 1".into()));
    }
    if rank > limit {
        return Err(CoreError::RankOverflow { rank, limit });
    }
    if !a.all_finite() {
        return Err(CoreError::NonFinite("rsvd input".into()));
    }

    let l = (rank + oversample).min(limit);
    let mut rng = Pcg32::new(seed);
    let omega = Matrix::from_fn(n, l, |_, _| rng.normal_f64());

    let y = a.matmul(&omega);
    let mut q = qr_thin_q(&y)?;
    for _ in 0..n_power_iters {
        let z = a.matmul_tn(&q); // a^T q, [n x l]
        let qz = qr_thin_q(&z)?;
        let y = a.matmul(&qz);
        q = qr_thin_q(&y)?;
    }

    let b = q.matmul_tn(a); // q^T a, [l x n]
    debug_assert_eq!(b.shape(), (l, n));
    let small = svd_jacobi(&b)?;

    // a ~= q b = (q u_b) s v_b^T; truncate to the requested rank.
    let u_small = small.u; // [l x min(l,n)]
    let mut u = Matrix::zeros(m, rank);
    let qu = q.matmul(&u_small);
    for i in 0..m {
        for j in 0..rank {
            u[(i, j)] = qu[(i, j)];
        }
    }
    let mut v = Matrix::zeros(n, rank);
    for i in 0..n {
        for j in 0..rank {
            v[(i, j)] = small.v[(i, j)];
        }
    }
    Ok(Svd {
        u,
        s: small.s[..rank].to_vec(),
        v,
    })
}

/// Matrix exponential via scaling-and-squaring with a Taylor series on the
/// scaled matrix. Accurate to close to machine precision for the modest
/// matrices used by the synthetic generators.
pub fn expm(a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let (m, n) = a.shape();
    if m != n {
        return Err(CoreError::ShapeMismatch {
            op: "expm",
            left: (m, n),
            right: (m, m),
        });
    }
    if !a.all_finite() {
        return Err(CoreError::NonFinite("expm input".into()));
    }

    // Scale so the max-abs entry norm bound keeps the Taylor tail tiny.
    let norm = a.max_abs().to_f64() * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0f64;
    while norm * scale > 0.5 && squarings < 64 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = {
        let mut b = a.clone();
        b.scale_assign(scale);
        b
    };

    let mut result = Matrix::<f64>::eye(n);
    let mut term = Matrix::<f64>::eye(n);
    for j in 1..=24usize {
        term = term.matmul(&b);
        term.scale_assign(1.0 / j as f64);
        result.add_assign_mat(&term);
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(m: usize, n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = Pcg32::new(seed);
        Matrix::from_fn(m, n, |_, _| rng.normal_f64())
    }

    fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn reconstruct(svd: &Svd) -> Matrix<f64> {
        let (m, k) = svd.u.shape();
        let n = svd.v.rows();
        let mut out = Matrix::zeros(m, n);
        for j in 0..k {
            for i in 0..m {
                for l in 0..n {
                    out[(i, l)] += svd.u[(i, j)] * svd.s[j] * svd.v[(l, j)];
                }
            }
        }
        out
    }

    #[test]
    fn qr_q_has_orthonormal_columns_and_spans_input() {
        let a = random(8, 5, 1);
        let q = qr_thin_q(&a).unwrap();
        assert_eq!(q.shape(), (8, 5));
        let qtq = q.matmul_tn(&q);
        assert!(max_abs_diff(&qtq, &Matrix::eye(5)) < 1e-12);
        // Full-rank input: Q Q^T acts as identity on range(A).
        let proj = q.matmul(&q.matmul_tn(&a));
        assert!(max_abs_diff(&proj, &a) < 1e-10);
    }

    #[test]
    fn qr_rejects_wide_input() {
        assert!(qr_thin_q(&random(3, 5, 2)).is_err());
    }

    #[test]
    fn jacobi_svd_factors_tall_and_wide_matrices() {
        for (m, n, seed) in [(7, 5, 3u64), (5, 7, 4u64), (6, 6, 5u64)] {
            let a = random(m, n, seed);
            let svd = svd_jacobi(&a).unwrap();
            let k = m.min(n);
            assert_eq!(svd.u.shape(), (m, k));
            assert_eq!(svd.v.shape(), (n, k));
            assert!(max_abs_diff(&reconstruct(&svd), &a) < 1e-10);
            let utu = svd.u.matmul_tn(&svd.u);
            let vtv = svd.v.matmul_tn(&svd.v);
            assert!(max_abs_diff(&utu, &Matrix::eye(k)) < 1e-12);
            assert!(max_abs_diff(&vtv, &Matrix::eye(k)) < 1e-12);
            for w in svd.s.windows(2) {
                assert!(w[0] >= w[1], "singular values must be sorted");
            }
            assert!(svd.s.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn jacobi_svd_recovers_diagonal_exactly() {
        let mut a = Matrix::<f64>::zeros(4, 4);
        for (i, s) in [3.0, 7.0, 0.5, 1.25].into_iter().enumerate() {
            a[(i, i)] = s;
        }
        let svd = svd_jacobi(&a).unwrap();
        assert_eq!(svd.s, vec![7.0, 3.0, 1.25, 0.5]);
    }

    #[test]
    fn rsvd_recovers_exact_low_rank_matrices() {
        // Build a rank-4 matrix with known singular values.
        let qu = qr_thin_q(&random(20, 4, 6)).unwrap();
        let qv = qr_thin_q(&random(15, 4, 7)).unwrap();
        let sigma = [9.0, 4.0, 2.0, 1.0];
        let mut a = Matrix::zeros(20, 15);
        for j in 0..4 {
            for i in 0..20 {
                for l in 0..15 {
                    a[(i, l)] += qu[(i, j)] * sigma[j] * qv[(l, j)];
                }
            }
        }
        let svd = rsvd(&a, 4, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS, 42).unwrap();
        for (got, want) in svd.s.iter().zip(sigma) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(max_abs_diff(&reconstruct(&svd), &a) < 1e-9);
    }

    #[test]
    fn rsvd_rank_checks() {
        let a = random(6, 9, 8);
        assert!(matches!(
            rsvd(&a, 7, 10, 2, 1),
            Err(CoreError::RankOverflow { rank: 7, limit: 6 })
        ));
        assert!(rsvd(&a, 0, 10, 2, 1).is_err());
        // Rank equal to the limit must work (oversampling is clamped).
        let svd = rsvd(&a, 6, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS, 9).unwrap();
        assert!(max_abs_diff(&reconstruct(&svd), &a) < 1e-9);
    }

    #[test]
    fn expm_matches_closed_forms() {
        // Zero matrix.
        let z = Matrix::<f64>::zeros(3, 3);
        assert!(max_abs_diff(&expm(&z).unwrap(), &Matrix::eye(3)) < 1e-15);

        // Diagonal.
        let mut d = Matrix::<f64>::zeros(2, 2);
        d[(0, 0)] = 1.5;
        d[(1, 1)] = -0.75;
        let e = expm(&d).unwrap();
        assert!((e[(0, 0)] - 1.5f64.exp()).abs() < 1e-13);
        assert!((e[(1, 1)] - (-0.75f64).exp()).abs() < 1e-13);
        assert!(e[(0, 1)].abs() < 1e-15 && e[(1, 0)].abs() < 1e-15);

        // Skew-symmetric generator of a rotation.
        let theta = 0.9f64;
        let mut skew = Matrix::<f64>::zeros(2, 2);
        skew[(0, 1)] = -theta;
        skew[(1, 0)] = theta;
        let rot = expm(&skew).unwrap();
        assert!((rot[(0, 0)] - theta.cos()).abs() < 1e-12);
        assert!((rot[(1, 0)] - theta.sin()).abs() < 1e-12);

        // Inverse property.
        let a = random(4, 4, 10);
        let mut small = a.clone();
        small.scale_assign(0.3);
        let mut neg = small.clone();
        neg.scale_assign(-1.0);
        let prod = expm(&small).unwrap().matmul(&expm(&neg).unwrap());
        assert!(max_abs_diff(&prod, &Matrix::eye(4)) < 1e-12);
    }
}
