//! Slow dense reference implementations used to validate the fast paths.
//!
//! Everything here is deliberately naive: the gated operators are
//! materialized entry by entry straight from their definitions, steps are
//! taken with textbook formulas, and nothing is shared with the matrix-free
//! or sketched code paths beyond the mask data itself. Tests compare the
//! production solvers against these routines; keep them dumb.

use ndarray::{s, Array1, Array2};
use thiserror::Error;

use crate::dense::{cholesky, solve_lower, solve_lower_transpose, DenseError};
use crate::linops::GateSet;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Dense(#[from] DenseError),
}

/// Dense image of the convex program: materialized F and G, labels, and the
/// group structure.
pub struct DenseProgram {
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub y: Array1<f64>,
    pub beta: f64,
    pub block_len: usize,
}

impl DenseProgram {
    pub fn build(x: &Array2<f64>, gs: &GateSet, y: &Array1<f64>, beta: f64) -> DenseProgram {
        let (n, d) = x.dim();
        let p = gs.pattern_count();
        let mut f = Array2::zeros((n, 2 * d * p));
        for i in 0..p {
            for r in 0..n {
                if gs.mask(i)[r] {
                    for j in 0..d {
                        f[[r, i * d + j]] = x[[r, j]];
                        f[[r, (p + i) * d + j]] = -x[[r, j]];
                    }
                }
            }
        }
        let mut g = Array2::zeros((2 * n * p, 2 * d * p));
        for b in 0..2 * p {
            let mask = gs.mask(b % p);
            for r in 0..n {
                let sign = if mask[r] { 1.0 } else { -1.0 };
                for j in 0..d {
                    g[[b * n + r, b * d + j]] = sign * x[[r, j]];
                }
            }
        }
        DenseProgram { f, g, y: y.clone(), beta, block_len: d }
    }

    /// Objective with the split variables collapsed (v = u):
    /// 1/2 ||Fu - y||^2 + beta * sum of block norms.
    pub fn objective(&self, u: &Array1<f64>) -> f64 {
        let r = &self.f.dot(u) - &self.y;
        let mut reg = 0.0;
        for b in 0..u.len() / self.block_len {
            let blk = u.slice(s![b * self.block_len..(b + 1) * self.block_len]);
            reg += blk.dot(&blk).sqrt();
        }
        0.5 * r.dot(&r) + self.beta * reg
    }

    /// Euclidean norm of the cone violation min(Gu, 0).
    pub fn constraint_violation(&self, u: &Array1<f64>) -> f64 {
        self.g.dot(u).iter().map(|&z| z.min(0.0).powi(2)).sum::<f64>().sqrt()
    }

    fn smoothed_objective(&self, u: &Array1<f64>, mu: f64) -> f64 {
        let viol = self.constraint_violation(u);
        self.objective(u) + viol * viol / (2.0 * mu)
    }

    /// Proximal gradient on the smoothed program
    ///   1/2 ||Fu - y||^2 + (1/2 mu) ||min(Gu, 0)||^2 + beta ||u||_{2,1}
    /// warm-started across a decreasing smoothing schedule. The step size is
    /// 1 / L with L bounding the smooth part's curvature, so the smoothed
    /// objective must never increase within a stage; the flag records that.
    pub fn prox_gradient(
        &self,
        mu_schedule: &[f64],
        iters_per_stage: usize,
        u0: &Array1<f64>,
    ) -> PgOutcome {
        let lf = lambda_max_gram(&self.f);
        let lg = lambda_max_gram(&self.g);
        let mut u = u0.clone();
        let mut stage_monotone = true;
        for &mu in mu_schedule {
            let lip = (lf + lg / mu) * 1.01;
            let step = 1.0 / lip;
            let tau = self.beta * step;
            let mut prev = self.smoothed_objective(&u, mu);
            for _ in 0..iters_per_stage {
                let grad_fit = self.f.t().dot(&(&self.f.dot(&u) - &self.y));
                let gu = self.g.dot(&u);
                let neg = gu.mapv(|z| z.min(0.0));
                let grad_pen = self.g.t().dot(&neg).mapv(|v| v / mu);
                let z = &u - &((&grad_fit + &grad_pen) * step);
                u = shrink_blocks(&z, self.block_len, tau);
                let cur = self.smoothed_objective(&u, mu);
                if cur > prev + 1e-10 * (1.0 + prev.abs()) {
                    stage_monotone = false;
                }
                prev = cur;
            }
        }
        let objective = self.objective(&u);
        let violation = self.constraint_violation(&u);
        PgOutcome { u, objective, violation, stage_monotone }
    }
}

pub struct PgOutcome {
    pub u: Array1<f64>,
    pub objective: f64,
    pub violation: f64,
    pub stage_monotone: bool,
}

/// Blockwise shrinkage in subtraction form, kept separate from the
/// production prox on purpose.
fn shrink_blocks(z: &Array1<f64>, block_len: usize, tau: f64) -> Array1<f64> {
    let mut out = Array1::zeros(z.len());
    for b in 0..z.len() / block_len {
        let blk = z.slice(s![b * block_len..(b + 1) * block_len]);
        let nrm = blk.dot(&blk).sqrt();
        if nrm > tau {
            for j in 0..block_len {
                out[b * block_len + j] = blk[j] - tau * blk[j] / nrm;
            }
        }
    }
    out
}

/// Largest eigenvalue of A^T A by plain power iteration with a fixed
/// deterministic start.
pub fn lambda_max_gram(a: &Array2<f64>) -> f64 {
    let cols = a.ncols();
    let mut v: Array1<f64> = (0..cols).map(|i| 1.0 + 0.01 * i as f64).collect();
    let nrm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / nrm);
    let mut lam = 0.0;
    for _ in 0..300 {
        let w = a.t().dot(&a.dot(&v));
        let nrm = w.dot(&w).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        lam = v.dot(&w);
        v = w / nrm;
    }
    lam
}

/// Exact minimizer of the u-step's quadratic model, computed densely:
///
///   ((1/rho)(F^T diag(dd) F + sigma I) + I + G^T G) u
///     = (1/rho)(F^T (dd .* F u0) + sigma u0 - F^T grad) + (v - lam) + G^T (s - nu)
///
/// solved by Cholesky factorization.
#[allow(clippy::too_many_arguments)]
pub fn quadratic_model_minimizer(
    prog: &DenseProgram,
    u0: &Array1<f64>,
    grad: &Array1<f64>,
    dd: &Array1<f64>,
    sigma: f64,
    rho: f64,
    v: &Array1<f64>,
    lam: &Array1<f64>,
    s: &Array1<f64>,
    nu: &Array1<f64>,
) -> Result<Array1<f64>, ReferenceError> {
    let dim = u0.len();
    let mut weighted_f = prog.f.clone();
    for (r, &w) in dd.iter().enumerate() {
        for c in 0..dim {
            weighted_f[[r, c]] *= w;
        }
    }
    let mut a = prog.f.t().dot(&weighted_f);
    for i in 0..dim {
        a[[i, i]] += sigma;
    }
    a.mapv_inplace(|x| x / rho);
    a = a + prog.g.t().dot(&prog.g);
    for i in 0..dim {
        a[[i, i]] += 1.0;
    }

    let fu0 = prog.f.dot(u0);
    let weighted = Array1::from_iter(fu0.iter().zip(dd.iter()).map(|(&z, &w)| w * z));
    let lin = (&(&prog.f.t().dot(&weighted) + &(u0 * sigma)) - &prog.f.t().dot(grad)) / rho;
    let rhs = &(&lin + &(v - lam)) + &prog.g.t().dot(&(s - nu));

    let l = cholesky(&a)?;
    let t = solve_lower(&l, &rhs);
    Ok(solve_lower_transpose(&l, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{gaussian_matrix, sym_eig};
    use crate::linops::GateSampling;
    use crate::rng::Rng;

    fn instance(seed: u64, n: usize, d: usize, p: usize) -> (Array2<f64>, Array1<f64>, GateSet) {
        let mut rng = Rng::new(seed);
        let x = gaussian_matrix(&mut rng, n, d).unwrap();
        let gs = GateSet::sample(&x, p, GateSampling::Gaussian, &mut rng).unwrap();
        let y: Array1<f64> = (0..n).map(|_| rng.normal()).collect();
        (x, y, gs)
    }

    #[test]
    fn lambda_max_matches_eigensolve() {
        let mut rng = Rng::new(31);
        let a = gaussian_matrix(&mut rng, 12, 7).unwrap();
        let (eigs, _) = sym_eig(&a.t().dot(&a)).unwrap();
        let lam = lambda_max_gram(&a);
        assert!((lam - eigs[0]).abs() <= 1e-8 * (1.0 + eigs[0]));
    }

    #[test]
    fn shrink_matches_scaling_form() {
        let mut rng = Rng::new(32);
        for _ in 0..50 {
            let z: Array1<f64> = (0..6).map(|_| rng.normal()).collect();
            let tau = rng.uniform();
            let sub = shrink_blocks(&z, 3, tau);
            let scaled = crate::solver::group_lasso_prox(&z, 3, tau);
            let diff = (&sub - &scaled).dot(&(&sub - &scaled)).sqrt();
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn prox_gradient_is_monotone_within_stages() {
        let (x, y, gs) = instance(33, 10, 3, 2);
        let prog = DenseProgram::build(&x, &gs, &y, 0.1);
        let u0 = Array1::zeros(prog.f.ncols());
        let out = prog.prox_gradient(&[1e-1, 1e-2], 300, &u0);
        assert!(out.stage_monotone);
        assert!(out.objective.is_finite());
    }

    #[test]
    fn tighter_smoothing_reduces_violation() {
        let (x, y, gs) = instance(34, 12, 4, 3);
        let prog = DenseProgram::build(&x, &gs, &y, 0.05);
        let u0 = Array1::zeros(prog.f.ncols());
        let loose = prog.prox_gradient(&[1e-1], 800, &u0);
        let tight = prog.prox_gradient(&[1e-1, 1e-2, 1e-3], 800, &u0);
        assert!(tight.violation <= loose.violation + 1e-12);
    }

    #[test]
    fn quadratic_model_minimizer_satisfies_stationarity() {
        let (x, y, gs) = instance(35, 8, 3, 2);
        let prog = DenseProgram::build(&x, &gs, &y, 0.1);
        let dim = prog.f.ncols();
        let cons = prog.g.nrows();
        let mut rng = Rng::new(36);
        let u0: Array1<f64> = (0..dim).map(|_| rng.normal()).collect();
        let v: Array1<f64> = (0..dim).map(|_| rng.normal()).collect();
        let lam: Array1<f64> = (0..dim).map(|_| rng.normal()).collect();
        let s: Array1<f64> = (0..cons).map(|_| rng.normal()).collect();
        let nu: Array1<f64> = (0..cons).map(|_| rng.normal()).collect();
        let dd: Array1<f64> = (0..x.nrows()).map(|_| rng.uniform() + 0.1).collect();
        let grad: Array1<f64> = (0..x.nrows()).map(|_| rng.normal()).collect();
        let (sigma, rho) = (0.3, 0.05);

        let u = quadratic_model_minimizer(&prog, &u0, &grad, &dd, sigma, rho, &v, &lam, &s, &nu)
            .unwrap();

        // Residual of the stationarity system the doc comment states.
        let mut weighted_f = prog.f.clone();
        for (r, &w) in dd.iter().enumerate() {
            for c in 0..dim {
                weighted_f[[r, c]] *= w;
            }
        }
        let mut a = prog.f.t().dot(&weighted_f);
        for i in 0..dim {
            a[[i, i]] += sigma;
        }
        a.mapv_inplace(|z| z / rho);
        a = a + prog.g.t().dot(&prog.g);
        for i in 0..dim {
            a[[i, i]] += 1.0;
        }
        let fu0 = prog.f.dot(&u0);
        let weighted = Array1::from_iter(fu0.iter().zip(dd.iter()).map(|(&z, &w)| w * z));
        let lin = (&(&prog.f.t().dot(&weighted) + &(&u0 * sigma)) - &prog.f.t().dot(&grad)) / rho;
        let rhs = &(&lin + &(&v - &lam)) + &prog.g.t().dot(&(&s - &nu));
        let resid = &a.dot(&u) - &rhs;
        let err = resid.dot(&resid).sqrt();
        assert!(err <= 1e-8 * (1.0 + rhs.dot(&rhs).sqrt()), "{err:.3e}");
    }
}
