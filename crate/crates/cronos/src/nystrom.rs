//! Randomized low-rank preconditioning for regularized normal equations.
//!
//! A rank-r sketch of a symmetric PSD operator H is built from exactly r
//! matvecs against an orthonormalized Gaussian test matrix. The resulting
//! eigenpair approximation (U, lam) defines a preconditioner for H + mu I
//! that flattens the top of the spectrum and leaves the orthogonal
//! complement untouched:
//!
//!   P       = U ((lam + mu) / (lam_r + mu)) U^T + (I - U U^T)
//!   P^{-1}  = (lam_r + mu) U (lam + mu I)^{-1} U^T + (I - U U^T)
//!
//! with lam_r the smallest retained eigenvalue. When the sketch captures
//! everything past rank r, the preconditioned system has condition number
//! near 1 + lam_r / mu regardless of how ill-conditioned H itself is.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::dense::{
    cholesky, gaussian_matrix, solve_lower, thin_qr, thin_svd, DenseError,
};
use crate::rng::Rng;

const POWER_ITERS: usize = 10;
const MAX_SHIFT_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum NystromError {
    #[error("sketch breakdown: core factorization failed after {attempts} shift increases")]
    SketchBreakdown { attempts: u32 },
    #[error("cg curvature is not positive at iteration {iter} (p'Ap = {curvature:.3e})")]
    IndefiniteSystem { iter: usize, curvature: f64 },
    #[error("rank {rank} is invalid for dimension {dim}")]
    BadRank { rank: usize, dim: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error(transparent)]
    Dense(#[from] DenseError),
}

/// Rank-r eigenpair approximation of a PSD operator, with the stabilization
/// shift that was subtracted back out of the eigenvalues.
#[derive(Debug, Clone)]
pub struct NystromApprox {
    pub u: Array2<f64>,
    pub lam: Array1<f64>,
    pub shift_used: f64,
}

/// Spectral norm of y estimated by power iteration on y^T y.
fn spectral_norm_estimate(y: &Array2<f64>) -> f64 {
    let r = y.ncols();
    if r == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(r, 1.0 / (r as f64).sqrt());
    for _ in 0..POWER_ITERS {
        let w = y.t().dot(&y.dot(&v));
        let nrm = w.dot(&w).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        v = w / nrm;
    }
    let yv = y.dot(&v);
    yv.dot(&yv).sqrt()
}

/// Build a rank-`rank` approximation of the operator behind `matvec`, which
/// must apply a symmetric PSD matrix of side `dim`. Costs exactly `rank`
/// matvecs; a tiny spectral shift keeps the core factorization positive
/// definite, and is increased tenfold on each of at most three retries
/// before giving up.
pub fn rand_nystrom<F>(
    mut matvec: F,
    dim: usize,
    rank: usize,
    rng: &mut Rng,
) -> Result<NystromApprox, NystromError>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    if rank == 0 || rank > dim {
        return Err(NystromError::BadRank { rank, dim });
    }
    let omega = thin_qr(&gaussian_matrix(rng, dim, rank)?)?;
    let mut y = Array2::zeros((dim, rank));
    for c in 0..rank {
        let col = matvec(&omega.column(c).to_owned());
        if col.len() != dim {
            return Err(NystromError::DimensionMismatch {
                context: format!("matvec returned length {}, want {dim}", col.len()),
            });
        }
        y.column_mut(c).assign(&col);
    }
    let sigma_stab = f64::EPSILON * spectral_norm_estimate(&y);

    let mut shift = sigma_stab;
    let mut attempt = 0u32;
    let chol = loop {
        let y_nu = &y + &(&omega * shift);
        let core = omega.t().dot(&y_nu);
        let core_sym = (&core + &core.t()) / 2.0;
        match cholesky(&core_sym) {
            Ok(l) => break (l, y_nu),
            Err(DenseError::NotPositiveDefinite { .. }) => {
                attempt += 1;
                if attempt > MAX_SHIFT_RETRIES {
                    return Err(NystromError::SketchBreakdown { attempts: attempt - 1 });
                }
                shift = sigma_stab.max(f64::EPSILON) * 10f64.powi(attempt as i32);
            }
            Err(e) => return Err(e.into()),
        }
    };
    let (l, y_nu) = chol;

    // B = Y_nu L^{-T}, row by row: L b_r = (row r of Y_nu).
    let mut b = Array2::zeros((dim, rank));
    for r in 0..dim {
        let sol = solve_lower(&l, &y_nu.row(r).to_owned());
        b.row_mut(r).assign(&sol);
    }
    let svd = thin_svd(&b)?;
    let lam = svd.sigma.mapv(|s| (s * s - shift).max(0.0));
    Ok(NystromApprox { u: svd.u, lam, shift_used: shift })
}

impl NystromApprox {
    pub fn rank(&self) -> usize {
        self.lam.len()
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    fn smallest(&self) -> f64 {
        self.lam[self.lam.len() - 1]
    }

    /// Apply the inverse preconditioner for the system shifted by `mu`.
    pub fn inv_apply(&self, mu: f64, v: &Array1<f64>) -> Array1<f64> {
        let floor = self.smallest() + mu;
        let t = self.u.t().dot(v);
        let scaled = Array1::from_iter(
            t.iter().zip(self.lam.iter()).map(|(&ti, &li)| (floor / (li + mu) - 1.0) * ti),
        );
        v + &self.u.dot(&scaled)
    }

    /// Apply the forward preconditioner for the system shifted by `mu`.
    pub fn apply(&self, mu: f64, v: &Array1<f64>) -> Array1<f64> {
        let floor = self.smallest() + mu;
        let t = self.u.t().dot(v);
        let scaled = Array1::from_iter(
            t.iter().zip(self.lam.iter()).map(|(&ti, &li)| ((li + mu) / floor - 1.0) * ti),
        );
        v + &self.u.dot(&scaled)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PcgReport {
    pub iters: usize,
    pub final_resid: f64,
    pub converged: bool,
}

/// Preconditioned CG on (H + mu I) x = b, warm-started at `x0`. `matvec`
/// applies H alone; the shift is added here. Stops when the residual norm
/// drops to `tol` or `maxit` iterations have run, whichever is first.
pub fn nystrom_pcg<F>(
    mut matvec: F,
    b: &Array1<f64>,
    x0: &Array1<f64>,
    pre: &NystromApprox,
    mu: f64,
    tol: f64,
    maxit: usize,
) -> Result<(Array1<f64>, PcgReport), NystromError>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    let dim = pre.dim();
    if b.len() != dim || x0.len() != dim {
        return Err(NystromError::DimensionMismatch {
            context: format!("b has length {}, x0 has length {}, want {dim}", b.len(), x0.len()),
        });
    }
    let shifted = |m: &mut F, v: &Array1<f64>| -> Array1<f64> { &m(v) + &(v * mu) };

    let mut x = x0.clone();
    let mut w = b - &shifted(&mut matvec, &x);
    let mut y = pre.inv_apply(mu, &w);
    let mut p = y.clone();
    let mut iters = 0;
    while w.dot(&w).sqrt() > tol && iters < maxit {
        let v = shifted(&mut matvec, &p);
        let curvature = p.dot(&v);
        if curvature <= 0.0 {
            return Err(NystromError::IndefiniteSystem { iter: iters, curvature });
        }
        let wy = w.dot(&y);
        let alpha = wy / curvature;
        x = &x + &(&p * alpha);
        let w_next = &w - &(&v * alpha);
        let y_next = pre.inv_apply(mu, &w_next);
        let beta = w_next.dot(&y_next) / wy;
        p = &y_next + &(&p * beta);
        w = w_next;
        y = y_next;
        iters += 1;
    }
    let final_resid = w.dot(&w).sqrt();
    Ok((x, PcgReport { iters, final_resid, converged: final_resid <= tol }))
}
