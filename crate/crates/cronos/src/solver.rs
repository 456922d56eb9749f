//! The operator-splitting loop for the convex training program.
//!
//! The program being solved is
//!
//!   min  l(F u, y) + beta * ||v||_{2,1} + indicator(s >= 0)
//!   s.t. u = v,  G u = s
//!
//! over the stacked coefficient vector u, with F and G the gated operators
//! from [`crate::linops`]. Each iteration takes an inexact u-step (a PCG
//! solve of a regularized normal system under a Nystrom preconditioner), a
//! closed-form group-shrinkage v-step, a nonnegative projection s-step, and
//! scaled dual ascent. The u-system for the least-squares loss is
//!
//!   ((1/rho) F^T F + G^T G + I) u = (1/rho) F^T y + v - lam + G^T (s - nu).
//!
//! For a general smooth loss the u-step minimizes the second-order Taylor
//! model of l around the current iterate u^k plus a (sigma/2)||u - u^k||^2
//! proximal term. Writing z = F u^k, g = grad l(z, y) and dd = diag hess,
//! stationarity of that model under the two augmented penalty terms gives
//!
//!   ((1/rho)(F^T diag(dd) F + sigma I) + G^T G + I) u
//!     = (1/rho)(F^T (dd .* z) + sigma u^k - F^T g) + v - lam + G^T (s - nu)
//!
//! which reduces to the least-squares system exactly when dd = 1, sigma = 0.
//! The reduction is asserted by tests; the derivation is cross-checked
//! against a dense minimizer of the same quadratic model.

use std::time::Instant;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{validate_data, GateSampling, GateSet, LinopError};
use crate::nystrom::{nystrom_pcg, rand_nystrom, NystromApprox, NystromError};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {context}")]
    BadConfig { context: String },
    #[error("nonfinite {context} at iteration {iter}")]
    NanDetected { iter: usize, context: &'static str },
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Nystrom(#[from] NystromError),
}

/// Optional residual-based early stop: quit once
/// max(||u - v||, ||Gu - s||) <= abs + rel * scale, where scale is the
/// largest norm among u, v, Gu and s.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StopRule {
    pub abs: f64,
    pub rel: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { abs: 1e-6, rel: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Penalty parameter. Sensible range is about [0.001, 1].
    pub rho: f64,
    /// Group-lasso regularization weight.
    pub beta: f64,
    /// Pattern count requested when sampling a gate set. Not consulted by the
    /// solve itself, which takes whatever gate set it is handed.
    pub patterns: usize,
    /// Preconditioner rank; clamped to the system dimension on tiny problems.
    pub rank: usize,
    pub admm_iters: usize,
    pub pcg_maxit: usize,
    /// Dual step scale gamma. None means gamma = rho, i.e. unit scaled-dual
    /// steps lam += (u - v).
    pub gamma: Option<f64>,
    /// PCG tolerance schedule exponent: iteration k solves to
    /// k^(-tol_exponent) * ||b^k||.
    pub tol_exponent: f64,
    pub stop: Option<StopRule>,
    /// Double or halve rho whenever the primal/dual residual ratio passes 10,
    /// rescaling the scaled duals and rebuilding the preconditioner.
    pub residual_balancing: bool,
    pub gate_sampling: GateSampling,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 0.01,
            beta: 1e-3,
            patterns: 8,
            rank: 20,
            admm_iters: 5,
            pcg_maxit: 50,
            gamma: None,
            tol_exponent: 1.2,
            stop: None,
            residual_balancing: false,
            gate_sampling: GateSampling::Gaussian,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |context: String| Err(SolverError::BadConfig { context });
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive and finite, got {}", self.rho));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if self.admm_iters == 0 {
            return bad("admm_iters must be at least 1".to_string());
        }
        if self.patterns == 0 {
            return bad("patterns must be at least 1".to_string());
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".to_string());
        }
        if self.pcg_maxit == 0 {
            return bad("pcg_maxit must be at least 1".to_string());
        }
        if !(self.tol_exponent > 0.0) {
            return bad(format!("tol_exponent must be positive, got {}", self.tol_exponent));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive when set, got {g}"));
            }
        }
        Ok(())
    }
}

/// Primal and dual variables of the split program.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexState {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub s: Array1<f64>,
    pub lam: Array1<f64>,
    pub nu: Array1<f64>,
}

impl ConvexState {
    pub fn zeros(gs: &GateSet) -> ConvexState {
        ConvexState {
            u: Array1::zeros(gs.coef_len()),
            v: Array1::zeros(gs.coef_len()),
            s: Array1::zeros(gs.constraint_len()),
            lam: Array1::zeros(gs.coef_len()),
            nu: Array1::zeros(gs.constraint_len()),
        }
    }

    fn check_dims(&self, gs: &GateSet) -> Result<(), SolverError> {
        let coef = gs.coef_len();
        let cons = gs.constraint_len();
        if self.u.len() != coef
            || self.v.len() != coef
            || self.lam.len() != coef
            || self.s.len() != cons
            || self.nu.len() != cons
        {
            return Err(SolverError::BadConfig {
                context: format!(
                    "state dims (u {}, v {}, s {}, lam {}, nu {}) do not fit a gate set with \
                     coefficient length {coef} and constraint length {cons}",
                    self.u.len(),
                    self.v.len(),
                    self.s.len(),
                    self.lam.len(),
                    self.nu.len()
                ),
            });
        }
        Ok(())
    }
}

/// One completed iteration. `wall_ms` is measured wall time and is the only
/// nondeterministic field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub obj: f64,
    pub resid_uv: f64,
    pub resid_gus: f64,
    pub dual_resid: f64,
    pub pcg_iters: usize,
    pub pcg_resid: f64,
    pub pcg_converged: bool,
    pub rho: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct IterHistory {
    pub records: Vec<IterRecord>,
}

/// Fixed export schema for one history line.
#[derive(Serialize)]
struct JsonlRecord {
    iter: usize,
    obj: f64,
    resid_uv: f64,
    resid_gus: f64,
    pcg_iters: usize,
    wall_ms: f64,
}

impl IterHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line with the fixed fields
    /// {iter, obj, resid_uv, resid_gus, pcg_iters, wall_ms}.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = JsonlRecord {
                iter: r.iter,
                obj: r.obj,
                resid_uv: r.resid_uv,
                resid_gus: r.resid_gus,
                pcg_iters: r.pcg_iters,
                wall_ms: r.wall_ms,
            };
            out.push_str(&serde_json::to_string(&line).expect("history serializes"));
            out.push('\n');
        }
        out
    }
}

/// Running mean of the iterates produced after each u/v/s update, the object
/// for which the O(1/K) feasibility rate holds. Averaging starts at the first
/// produced iterate (the second element of the u sequence when starting from
/// zero).
#[derive(Debug, Clone)]
pub struct ErgodicAverages {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub s: Array1<f64>,
    pub count: usize,
}

impl ErgodicAverages {
    /// Feasibility of the averaged point: (||u - v||, ||min(Gu, 0)||).
    pub fn feasibility(&self, x: &Array2<f64>, gs: &GateSet) -> Result<(f64, f64), LinopError> {
        let duv = &self.u - &self.v;
        let gu = gs.apply_g(x, &self.u)?;
        let neg: f64 = gu.iter().map(|&z| z.min(0.0).powi(2)).sum::<f64>().sqrt();
        Ok((duv.dot(&duv).sqrt(), neg))
    }
}

#[derive(Debug)]
pub struct SolveResult {
    pub state: ConvexState,
    pub history: IterHistory,
    pub ergodic: ErgodicAverages,
}

/// Smooth convex loss of the predictions, with elementwise curvature and an
/// optional proximal weight for the Taylor-model u-step.
pub trait SmoothLoss {
    fn value(&self, z: &Array1<f64>, y: &Array1<f64>) -> f64;
    /// Gradient in z.
    fn gradient(&self, z: &Array1<f64>, y: &Array1<f64>) -> Array1<f64>;
    /// Diagonal of the Hessian in z; must be nonnegative.
    fn hessian_diag(&self, z: &Array1<f64>, y: &Array1<f64>) -> Array1<f64>;
    /// Taylor-model proximal weight sigma.
    fn sigma(&self) -> f64 {
        0.0
    }
}

/// l(z, y) = 1/2 ||z - y||^2.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl SmoothLoss for SquaredLoss {
    fn value(&self, z: &Array1<f64>, y: &Array1<f64>) -> f64 {
        let r = z - y;
        0.5 * r.dot(&r)
    }

    fn gradient(&self, z: &Array1<f64>, y: &Array1<f64>) -> Array1<f64> {
        z - y
    }

    fn hessian_diag(&self, z: &Array1<f64>, _y: &Array1<f64>) -> Array1<f64> {
        Array1::ones(z.len())
    }
}

/// Binary logistic loss over labels in {-1, +1}:
/// l(z, y) = sum_i log(1 + exp(-y_i z_i)).
#[derive(Debug, Clone, Copy)]
pub struct LogisticLoss {
    pub sigma: f64,
}

impl Default for LogisticLoss {
    fn default() -> Self {
        LogisticLoss { sigma: 0.0 }
    }
}

fn log1p_exp(t: f64) -> f64 {
    // log(1 + e^t), stable for large |t|.
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl SmoothLoss for LogisticLoss {
    fn value(&self, z: &Array1<f64>, y: &Array1<f64>) -> f64 {
        z.iter().zip(y.iter()).map(|(&zi, &yi)| log1p_exp(-yi * zi)).sum()
    }

    fn gradient(&self, z: &Array1<f64>, y: &Array1<f64>) -> Array1<f64> {
        z.iter()
            .zip(y.iter())
            .map(|(&zi, &yi)| {
                let t = yi * zi;
                -yi / (1.0 + t.exp())
            })
            .collect()
    }

    fn hessian_diag(&self, z: &Array1<f64>, y: &Array1<f64>) -> Array1<f64> {
        z.iter()
            .zip(y.iter())
            .map(|(&zi, &yi)| {
                let p = 1.0 / (1.0 + (-(yi * zi)).exp());
                p * (1.0 - p)
            })
            .collect()
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Blockwise soft shrinkage: each block of length `block_len` maps to
/// b * max(0, 1 - tau / ||b||), with 0 staying 0.
pub fn group_lasso_prox(z: &Array1<f64>, block_len: usize, tau: f64) -> Array1<f64> {
    debug_assert!(tau >= 0.0);
    debug_assert!(block_len > 0 && z.len() % block_len == 0);
    let mut out = z.clone();
    for b in 0..z.len() / block_len {
        let mut blk = out.slice_mut(s![b * block_len..(b + 1) * block_len]);
        let nrm = blk.dot(&blk).sqrt();
        let scale = if nrm > tau { 1.0 - tau / nrm } else { 0.0 };
        blk.mapv_inplace(|v| v * scale);
    }
    out
}

/// Elementwise projection onto the nonnegative orthant.
pub fn project_nonneg(z: &Array1<f64>) -> Array1<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Sum of blockwise Euclidean norms.
pub fn group_norm(z: &Array1<f64>, block_len: usize) -> f64 {
    debug_assert!(block_len > 0 && z.len() % block_len == 0);
    (0..z.len() / block_len)
        .map(|b| {
            let blk = z.slice(s![b * block_len..(b + 1) * block_len]);
            blk.dot(&blk).sqrt()
        })
        .sum()
}

/// Objective and feasibility summary of a state, under the least-squares
/// loss. The cone indicator is reported as the constraint residual rather
/// than an infinity.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveReport {
    pub loss_term: f64,
    pub reg_term: f64,
    pub primal_resid_u_v: f64,
    pub primal_resid_gu_s: f64,
}

pub fn evaluate_objective(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    state: &ConvexState,
    beta: f64,
) -> Result<ObjectiveReport, SolverError> {
    validate_data(x, y)?;
    state.check_dims(gs)?;
    let fu = gs.apply_f(x, &state.u)?;
    let gu = gs.apply_g(x, &state.u)?;
    let duv = &state.u - &state.v;
    let dgs = &gu - &state.s;
    Ok(ObjectiveReport {
        loss_term: SquaredLoss.value(&fu, y),
        reg_term: beta * group_norm(&state.v, gs.feature_dim()),
        primal_resid_u_v: duv.dot(&duv).sqrt(),
        primal_resid_gu_s: dgs.dot(&dgs).sqrt(),
    })
}

enum UStep<'a> {
    LeastSquares,
    Taylor { loss: &'a dyn SmoothLoss, refresh_every: usize },
}

struct Observer<'a>(Option<&'a mut dyn FnMut(&ConvexState, &IterRecord)>);

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn all_finite(v: &Array1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn run_admm(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
    mut state: ConvexState,
    start_iter: usize,
    ustep: UStep<'_>,
    mut observer: Observer<'_>,
) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    validate_data(x, y)?;
    if gs.row_count() != x.nrows() || gs.feature_dim() != x.ncols() {
        return Err(SolverError::BadConfig {
            context: format!(
                "gate set was built for {}x{} data but got {:?}",
                gs.row_count(),
                gs.feature_dim(),
                x.dim()
            ),
        });
    }
    state.check_dims(gs)?;
    if let UStep::Taylor { refresh_every, .. } = ustep {
        if refresh_every == 0 {
            return Err(SolverError::BadConfig {
                context: "refresh_every must be at least 1".to_string(),
            });
        }
    }

    let d = gs.feature_dim();
    let coef = gs.coef_len();
    let rank = cfg.rank.min(coef);
    let mut rng = Rng::new(cfg.seed);
    let mut rho = cfg.rho;

    let ft_y = gs.ft_unchecked(x, y);
    let mut fu = gs.f_unchecked(x, &state.u);

    // The current curvature profile: dd = 1, sigma = 0 in least-squares mode.
    let mut dd: Array1<f64> = Array1::ones(x.nrows());
    let sigma = match &ustep {
        UStep::LeastSquares => 0.0,
        UStep::Taylor { loss, .. } => loss.sigma(),
    };

    let mut pre: Option<NystromApprox> = None;
    let mut ergodic_u = Array1::<f64>::zeros(coef);
    let mut ergodic_v = Array1::<f64>::zeros(coef);
    let mut ergodic_s = Array1::<f64>::zeros(gs.constraint_len());
    let mut ergodic_count = 0usize;
    let mut history = IterHistory::default();

    for k in 1..=cfg.admm_iters {
        let kg = start_iter + k;
        let t0 = Instant::now();

        // Linearization point quantities for the general loss; the
        // least-squares path never touches them.
        let b = match &ustep {
            UStep::LeastSquares => {
                let sv = &state.s - &state.nu;
                &(&ft_y / rho) + &(&state.v - &state.lam) + gs.gt_unchecked(x, &sv)
            }
            UStep::Taylor { loss, .. } => {
                let grad = loss.gradient(&fu, y);
                dd = loss.hessian_diag(&fu, y);
                let weighted = Array1::from_iter(
                    fu.iter().zip(dd.iter()).map(|(&zi, &ddi)| ddi * zi),
                );
                let lin = &(&gs.ft_unchecked(x, &weighted) + &(&state.u * sigma))
                    - &gs.ft_unchecked(x, &grad);
                let sv = &state.s - &state.nu;
                &(&lin / rho) + &(&state.v - &state.lam) + gs.gt_unchecked(x, &sv)
            }
        };

        let rebuild = pre.is_none()
            || match &ustep {
                UStep::LeastSquares => false,
                UStep::Taylor { refresh_every, .. } => (kg - 1) % refresh_every == 0,
            };
        if rebuild {
            let sketched = match &ustep {
                UStep::LeastSquares => {
                    rand_nystrom(|p| gs.h_unchecked(x, rho, p), coef, rank, &mut rng)?
                }
                UStep::Taylor { .. } => {
                    let mv = |p: &Array1<f64>| {
                        let fp = gs.f_unchecked(x, p);
                        let wfp = Array1::from_iter(
                            fp.iter().zip(dd.iter()).map(|(&zi, &ddi)| ddi * zi),
                        );
                        let mut out = gs.ft_unchecked(x, &wfp);
                        out.mapv_inplace(|v| v / rho);
                        out = out + gs.gt_unchecked(x, &gs.g_unchecked(x, p));
                        out + &(p * (sigma / rho))
                    };
                    rand_nystrom(mv, coef, rank, &mut rng)?
                }
            };
            pre = Some(sketched);
        }
        let pre_ref = pre.as_ref().expect("preconditioner built");

        let tol = norm(&b) * (kg as f64).powf(-cfg.tol_exponent);
        let (u_next, pcg) = match &ustep {
            UStep::LeastSquares => nystrom_pcg(
                |p| gs.h_unchecked(x, rho, p),
                &b,
                &state.u,
                pre_ref,
                1.0,
                tol,
                cfg.pcg_maxit,
            )?,
            UStep::Taylor { .. } => nystrom_pcg(
                |p| {
                    let fp = gs.f_unchecked(x, p);
                    let wfp = Array1::from_iter(
                        fp.iter().zip(dd.iter()).map(|(&zi, &ddi)| ddi * zi),
                    );
                    let mut out = gs.ft_unchecked(x, &wfp);
                    out.mapv_inplace(|v| v / rho);
                    out = out + gs.gt_unchecked(x, &gs.g_unchecked(x, p));
                    out + &(p * (sigma / rho))
                },
                &b,
                &state.u,
                pre_ref,
                1.0,
                tol,
                cfg.pcg_maxit,
            )?,
        };
        state.u = u_next;
        if !all_finite(&state.u) {
            return Err(SolverError::NanDetected { iter: kg, context: "u iterate" });
        }

        let v_prev = std::mem::replace(
            &mut state.v,
            group_lasso_prox(&(&state.u + &state.lam), d, cfg.beta / rho),
        );
        let gu = gs.g_unchecked(x, &state.u);
        let s_prev = std::mem::replace(&mut state.s, project_nonneg(&(&gu + &state.nu)));

        // gamma = rho makes this the standard scaled dual ascent with unit
        // step; the identity is pinned by tests.
        let step = cfg.gamma.unwrap_or(rho) / rho;
        debug_assert!(cfg.gamma.is_some() || step == 1.0);
        state.lam = &state.lam + &((&state.u - &state.v) * step);
        state.nu = &state.nu + &((&gu - &state.s) * step);

        let resid_uv = norm(&(&state.u - &state.v));
        let resid_gus = norm(&(&gu - &state.s));
        let dual_vec = &(&v_prev - &state.v)
            + &gs.gt_unchecked(x, &(&s_prev - &state.s));
        let dual_resid = rho * norm(&dual_vec);

        fu = gs.f_unchecked(x, &state.u);
        let loss_val = match &ustep {
            UStep::LeastSquares => SquaredLoss.value(&fu, y),
            UStep::Taylor { loss, .. } => loss.value(&fu, y),
        };
        let obj = loss_val + cfg.beta * group_norm(&state.v, d);
        if !obj.is_finite() {
            return Err(SolverError::NanDetected { iter: kg, context: "objective" });
        }

        ergodic_u = ergodic_u + &state.u;
        ergodic_v = ergodic_v + &state.v;
        ergodic_s = ergodic_s + &state.s;
        ergodic_count += 1;

        let record = IterRecord {
            iter: kg,
            obj,
            resid_uv,
            resid_gus,
            dual_resid,
            pcg_iters: pcg.iters,
            pcg_resid: pcg.final_resid,
            pcg_converged: pcg.converged,
            rho,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(f) = observer.0.as_mut() {
            f(&state, &record);
        }
        history.records.push(record);

        if let Some(rule) = cfg.stop {
            let scale = norm(&state.u)
                .max(norm(&state.v))
                .max(norm(&gu))
                .max(norm(&state.s));
            if resid_uv.max(resid_gus) <= rule.abs + rule.rel * scale {
                break;
            }
        }

        if cfg.residual_balancing {
            let primal = resid_uv.hypot(resid_gus);
            let new_rho = if primal > 10.0 * dual_resid {
                rho * 2.0
            } else if dual_resid > 10.0 * primal {
                rho / 2.0
            } else {
                rho
            };
            if new_rho != rho {
                let rescale = rho / new_rho;
                state.lam.mapv_inplace(|v| v * rescale);
                state.nu.mapv_inplace(|v| v * rescale);
                rho = new_rho;
                pre = None;
            }
        }
    }

    let count = ergodic_count.max(1) as f64;
    Ok(SolveResult {
        state,
        history,
        ergodic: ErgodicAverages {
            u: ergodic_u / count,
            v: ergodic_v / count,
            s: ergodic_s / count,
            count: ergodic_count,
        },
    })
}

/// Solve the least-squares program from the zero start.
pub fn cronos_solve(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    run_admm(x, y, gs, cfg, ConvexState::zeros(gs), 0, UStep::LeastSquares, Observer(None))
}

/// Solve the least-squares program continuing from an existing state.
/// `start_iter` is the number of iterations already taken on this state; it
/// keeps the inexactness schedule tightening instead of resetting to the
/// loose first-iteration tolerance.
pub fn cronos_resume(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
    state: ConvexState,
    start_iter: usize,
) -> Result<SolveResult, SolverError> {
    run_admm(x, y, gs, cfg, state, start_iter, UStep::LeastSquares, Observer(None))
}

/// As [`cronos_solve`], invoking `obs` with the state after every iteration.
pub fn cronos_solve_observed(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
    mut obs: impl FnMut(&ConvexState, &IterRecord),
) -> Result<SolveResult, SolverError> {
    run_admm(x, y, gs, cfg, ConvexState::zeros(gs), 0, UStep::LeastSquares, Observer(Some(&mut obs)))
}

/// Solve under a general smooth loss. The u-step minimizes the second-order
/// Taylor model of the loss about the current iterate; the preconditioner is
/// rebuilt every `refresh_every` iterations and may therefore lag the
/// curvature by up to `refresh_every - 1` iterations, which affects only PCG
/// speed, never the system being solved.
pub fn cronos_general_solve(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
    loss: &dyn SmoothLoss,
    refresh_every: usize,
) -> Result<SolveResult, SolverError> {
    run_admm(
        x,
        y,
        gs,
        cfg,
        ConvexState::zeros(gs),
        0,
        UStep::Taylor { loss, refresh_every },
        Observer(None),
    )
}

/// As [`cronos_general_solve`] with a per-iteration observer.
pub fn cronos_general_solve_observed(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
    loss: &dyn SmoothLoss,
    refresh_every: usize,
    mut obs: impl FnMut(&ConvexState, &IterRecord),
) -> Result<SolveResult, SolverError> {
    run_admm(
        x,
        y,
        gs,
        cfg,
        ConvexState::zeros(gs),
        0,
        UStep::Taylor { loss, refresh_every },
        Observer(Some(&mut obs)),
    )
}

/// Resume variant of [`cronos_general_solve`]; `start_iter` as in
/// [`cronos_resume`].
pub fn cronos_general_resume(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    cfg: &SolverConfig,
    loss: &dyn SmoothLoss,
    refresh_every: usize,
    state: ConvexState,
    start_iter: usize,
) -> Result<SolveResult, SolverError> {
    run_admm(x, y, gs, cfg, state, start_iter, UStep::Taylor { loss, refresh_every }, Observer(None))
}
