//! Dense kernels for the small factorizations the solver needs: Gaussian
//! sampling, thin QR, Cholesky, symmetric eigendecomposition, and thin SVD.
//!
//! Everything here runs on matrices no larger than a few hundred rows, so the
//! implementations favor determinism and simplicity: Householder reflections
//! for QR, cyclic Jacobi for the eigensolver, one-sided Jacobi for the SVD.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::rng::Rng;

const MAX_JACOBI_SWEEPS: usize = 64;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("rank deficiency at column {col}: residual norm {pivot:.3e} below threshold")]
    RankDeficient { col: usize, pivot: f64 },
    #[error("shift too small: nonpositive pivot {pivot:.3e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
}

/// Matrix with independent standard normal entries, filled row by row.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Result<Array2<f64>, DenseError> {
    if rows == 0 || cols == 0 {
        return Err(DenseError::EmptyMatrix { rows, cols });
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            out[[i, j]] = rng.normal();
        }
    }
    Ok(out)
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Thin QR by Householder reflections. Returns the orthonormal factor with
/// the same shape as the input, normalized so the implicit triangular factor
/// has a nonnegative diagonal.
pub fn thin_qr(a: &Array2<f64>) -> Result<Array2<f64>, DenseError> {
    let (m, k) = a.dim();
    if m == 0 || k == 0 {
        return Err(DenseError::EmptyMatrix { rows: m, cols: k });
    }
    if m < k {
        return Err(DenseError::DimensionMismatch {
            context: format!("thin QR requires rows >= cols, got {m}x{k}"),
        });
    }
    let tol = 1e-12 * frobenius(a);
    let mut r = a.clone();
    let mut reflectors: Vec<Array1<f64>> = Vec::with_capacity(k);
    let mut diag_sign = vec![1.0f64; k];
    for j in 0..k {
        let mut norm = 0.0;
        for i in j..m {
            norm += r[[i, j]] * r[[i, j]];
        }
        let norm = norm.sqrt();
        if norm <= tol {
            return Err(DenseError::RankDeficient { col: j, pivot: norm });
        }
        let alpha = if r[[j, j]] >= 0.0 { -norm } else { norm };
        let mut v = Array1::zeros(m - j);
        for i in j..m {
            v[i - j] = r[[i, j]];
        }
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in j..k {
                let mut dot = 0.0;
                for i in j..m {
                    dot += v[i - j] * r[[i, col]];
                }
                let scale = 2.0 * dot / vnorm2;
                for i in j..m {
                    r[[i, col]] -= scale * v[i - j];
                }
            }
        }
        reflectors.push(v);
        diag_sign[j] = if r[[j, j]] >= 0.0 { 1.0 } else { -1.0 };
    }
    // Accumulate Q = H_0 ... H_{k-1} applied to the thin identity.
    let mut q = Array2::zeros((m, k));
    for j in 0..k {
        q[[j, j]] = 1.0;
    }
    for j in (0..k).rev() {
        let v = &reflectors[j];
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in 0..k {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i - j] * q[[i, col]];
            }
            let scale = 2.0 * dot / vnorm2;
            for i in j..m {
                q[[i, col]] -= scale * v[i - j];
            }
        }
    }
    for j in 0..k {
        if diag_sign[j] < 0.0 {
            for i in 0..m {
                q[[i, j]] = -q[[i, j]];
            }
        }
    }
    Ok(q)
}

/// Cholesky factor L with S = L L^T. A nonpositive pivot signals the caller
/// that the matrix needs a larger diagonal shift.
pub fn cholesky(s: &Array2<f64>) -> Result<Array2<f64>, DenseError> {
    let (n, m) = s.dim();
    if n == 0 {
        return Err(DenseError::EmptyMatrix { rows: n, cols: m });
    }
    if n != m {
        return Err(DenseError::DimensionMismatch {
            context: format!("cholesky requires a square matrix, got {n}x{m}"),
        });
    }
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = s[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 {
            return Err(DenseError::NotPositiveDefinite { row: j, pivot: d });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut acc = s[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = acc / djj;
        }
    }
    Ok(l)
}

/// Forward substitution: solve L z = b for lower-triangular L.
pub fn solve_lower(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut z = Array1::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[[i, k]] * z[k];
        }
        z[i] = acc / l[[i, i]];
    }
    z
}

/// Back substitution: solve L^T z = b for lower-triangular L.
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut z = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut acc = b[i];
        for k in (i + 1)..n {
            acc -= l[[k, i]] * z[k];
        }
        z[i] = acc / l[[i, i]];
    }
    z
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eig(s: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), DenseError> {
    let (n, m) = s.dim();
    if n == 0 {
        return Err(DenseError::EmptyMatrix { rows: n, cols: m });
    }
    if n != m {
        return Err(DenseError::DimensionMismatch {
            context: format!("sym_eig requires a square matrix, got {n}x{m}"),
        });
    }
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = 0.5 * (s[[i, j]] + s[[j, i]]);
        }
    }
    let scale = frobenius(&a).max(f64::MIN_POSITIVE);
    let mut v: Array2<f64> = Array2::eye(n);
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= 1e-13 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for i in 0..n {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - sn * aiq;
                    a[[i, q]] = sn * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[[p, j]];
                    let aqj = a[[q, j]];
                    a[[p, j]] = c * apj - sn * aqj;
                    a[[q, j]] = sn * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - sn * viq;
                    v[[i, q]] = sn * vip + c * viq;
                }
            }
        }
    }
    if !converged {
        return Err(DenseError::NoConvergence { sweeps: MAX_JACOBI_SWEEPS });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let mut eigvals = Array1::zeros(n);
    let mut eigvecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigvals[dst] = a[[src, src]];
        for i in 0..n {
            eigvecs[[i, dst]] = v[[i, src]];
        }
    }
    Ok((eigvals, eigvecs))
}

/// Thin SVD result; `b = u * diag(sigma) * v^T` with orthonormal `u`, `v`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

/// Thin SVD of a tall matrix by one-sided Jacobi: rotate column pairs until
/// they are mutually orthogonal, then read off norms as singular values.
/// Singular values come out in descending order.
pub fn thin_svd(b: &Array2<f64>) -> Result<ThinSvd, DenseError> {
    let (m, k) = b.dim();
    if m == 0 || k == 0 {
        return Err(DenseError::EmptyMatrix { rows: m, cols: k });
    }
    if m < k {
        return Err(DenseError::DimensionMismatch {
            context: format!("thin SVD requires rows >= cols, got {m}x{k}"),
        });
    }
    let mut w = b.clone();
    let mut v: Array2<f64> = Array2::eye(k);
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    app += w[[i, p]] * w[[i, p]];
                    aqq += w[[i, q]] * w[[i, q]];
                    apq += w[[i, p]] * w[[i, q]];
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for i in 0..m {
                    let wip = w[[i, p]];
                    let wiq = w[[i, q]];
                    w[[i, p]] = c * wip - sn * wiq;
                    w[[i, q]] = sn * wip + c * wiq;
                }
                for i in 0..k {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - sn * viq;
                    v[[i, q]] = sn * vip + c * viq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DenseError::NoConvergence { sweeps: MAX_JACOBI_SWEEPS });
    }
    let mut norms: Vec<(usize, f64)> = (0..k)
        .map(|j| {
            let nj = (0..m).map(|i| w[[i, j]] * w[[i, j]]).sum::<f64>().sqrt();
            (j, nj)
        })
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut u = Array2::zeros((m, k));
    let mut sigma = Array1::zeros(k);
    let mut vperm = Array2::zeros((k, k));
    for (dst, &(src, nj)) in norms.iter().enumerate() {
        sigma[dst] = nj;
        if nj > 0.0 {
            for i in 0..m {
                u[[i, dst]] = w[[i, src]] / nj;
            }
        }
        for i in 0..k {
            vperm[[i, dst]] = v[[i, src]];
        }
    }
    Ok(ThinSvd { u, sigma, v: vperm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_matrix_is_deterministic() {
        let a = gaussian_matrix(&mut Rng::new(5), 2, 2).unwrap();
        let b = gaussian_matrix(&mut Rng::new(5), 2, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_matrix_rejects_empty() {
        assert!(gaussian_matrix(&mut Rng::new(0), 0, 3).is_err());
        assert!(gaussian_matrix(&mut Rng::new(0), 3, 0).is_err());
    }

    #[test]
    fn gaussian_matrix_column_means_are_small() {
        let a = gaussian_matrix(&mut Rng::new(11), 1000, 4).unwrap();
        for j in 0..4 {
            let mean: f64 = (0..1000).map(|i| a[[i, j]]).sum::<f64>() / 1000.0;
            assert!(mean.abs() <= 0.15, "column {j} mean {mean}");
        }
    }

    #[test]
    fn thin_qr_identity_is_identity() {
        let eye: Array2<f64> = Array2::eye(4);
        let q = thin_qr(&eye).unwrap();
        assert!(max_abs_diff(&q, &eye) <= 1e-14);
    }

    #[test]
    fn thin_qr_normalizes_single_column() {
        let a = ndarray::arr2(&[[3.0], [4.0]]);
        let q = thin_qr(&a).unwrap();
        assert!((q[[0, 0]] - 0.6).abs() <= 1e-15);
        assert!((q[[1, 0]] - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn thin_qr_orthonormal_and_range_preserving() {
        let a = gaussian_matrix(&mut Rng::new(17), 20, 5).unwrap();
        let q = thin_qr(&a).unwrap();
        let qtq = q.t().dot(&q);
        assert!(max_abs_diff(&qtq, &Array2::eye(5)) <= 1e-10);
        // Range check: projecting A onto span(Q) returns A.
        let proj = q.dot(&q.t().dot(&a));
        assert!(max_abs_diff(&proj, &a) <= 1e-10 * frobenius(&a));
    }

    #[test]
    fn thin_qr_flags_rank_deficiency() {
        let mut a = gaussian_matrix(&mut Rng::new(23), 10, 3).unwrap();
        for i in 0..10 {
            a[[i, 2]] = a[[i, 0]] + a[[i, 1]];
        }
        match thin_qr(&a) {
            Err(DenseError::RankDeficient { col, .. }) => assert_eq!(col, 2),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_identity_and_scalar() {
        let eye: Array2<f64> = Array2::eye(3);
        let l = cholesky(&eye).unwrap();
        assert!(max_abs_diff(&l, &eye) <= 1e-15);
        let s = ndarray::arr2(&[[4.0]]);
        assert!((cholesky(&s).unwrap()[[0, 0]] - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let a = gaussian_matrix(&mut Rng::new(31), 10, 10).unwrap();
        let s = a.t().dot(&a) + Array2::<f64>::eye(10) * 10.0;
        let l = cholesky(&s).unwrap();
        let recon = l.dot(&l.t());
        assert!(max_abs_diff(&recon, &s) <= 1e-10 * frobenius(&s));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = ndarray::arr2(&[[1.0, 0.0], [0.0, -1.0]]);
        assert!(matches!(cholesky(&s), Err(DenseError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn triangular_solves_invert_cholesky() {
        let a = gaussian_matrix(&mut Rng::new(37), 8, 8).unwrap();
        let s = a.t().dot(&a) + Array2::<f64>::eye(8) * 8.0;
        let l = cholesky(&s).unwrap();
        let b = Array1::linspace(1.0, 8.0, 8);
        let z = solve_lower(&l, &b);
        let x = solve_lower_transpose(&l, &z);
        let resid = &s.dot(&x) - &b;
        let rnorm: f64 = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rnorm <= 1e-10);
    }

    #[test]
    fn sym_eig_diagonal() {
        let s = ndarray::arr2(&[[3.0, 0.0], [0.0, 1.0]]);
        let (vals, _) = sym_eig(&s).unwrap();
        assert!((vals[0] - 3.0).abs() <= 1e-14);
        assert!((vals[1] - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn sym_eig_reconstructs() {
        for &n in &[15usize, 200] {
            let a = gaussian_matrix(&mut Rng::new(41 + n as u64), n, n).unwrap();
            let s = &a + &a.t();
            let (vals, vecs) = sym_eig(&s).unwrap();
            for j in 1..n {
                assert!(vals[j - 1] >= vals[j]);
            }
            let vtv = vecs.t().dot(&vecs);
            assert!(max_abs_diff(&vtv, &Array2::eye(n)) <= 1e-9);
            let mut recon = Array2::zeros((n, n));
            for j in 0..n {
                for r in 0..n {
                    for c in 0..n {
                        recon[[r, c]] += vals[j] * vecs[[r, j]] * vecs[[c, j]];
                    }
                }
            }
            assert!(max_abs_diff(&recon, &s) <= 1e-9 * frobenius(&s), "dim {n}");
        }
    }

    #[test]
    fn thin_svd_orthonormal_input_gives_unit_singular_values() {
        let a = gaussian_matrix(&mut Rng::new(43), 12, 4).unwrap();
        let q = thin_qr(&a).unwrap();
        let svd = thin_svd(&q).unwrap();
        for j in 0..4 {
            assert!((svd.sigma[j] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn thin_svd_reconstructs() {
        let b = gaussian_matrix(&mut Rng::new(47), 15, 6).unwrap();
        let svd = thin_svd(&b).unwrap();
        for j in 1..6 {
            assert!(svd.sigma[j - 1] >= svd.sigma[j]);
        }
        let mut us = svd.u.clone();
        for j in 0..6 {
            for i in 0..15 {
                us[[i, j]] *= svd.sigma[j];
            }
        }
        let recon = us.dot(&svd.v.t());
        assert!(max_abs_diff(&recon, &b) <= 1e-9 * frobenius(&b));
        let utu = svd.u.t().dot(&svd.u);
        assert!(max_abs_diff(&utu, &Array2::eye(6)) <= 1e-10);
    }
}
