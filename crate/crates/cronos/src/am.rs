//! Alternating minimization for deeper networks.
//!
//! The inner layers of an MLP act as a feature map: X~ = ReLU(...ReLU(X W1^T
//! + b1)...). Each outer round solves the convex program over X~ for the head
//! coefficients, then takes adaptive gradient steps on the inner weights
//! against the fit term
//!
//!   || sum_i D_i X~(theta) (u_i - u_{P+i}) - y ||^2 + (alpha/2) sum ||W_l||_F^2
//!
//! with the head u and the gate masks D_i held fixed (the gating function is
//! piecewise constant, so the masks are constants almost everywhere). The
//! inner optimizer defaults to a learning-rate-free D-Adaptation variant of
//! Adam; its state persists across outer rounds.

use std::time::Instant;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::linops::GateSet;
use crate::rng::Rng;
use crate::solver::{
    cronos_resume, cronos_solve, ConvexState, IterHistory, SolveResult, SolverConfig, SolverError,
};

#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Inner-layer parameters; the same container carries gradients.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
}

/// Architecture of the inner layers: input width and one entry per hidden
/// layer. Empty `hidden` means no inner layers at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.input_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(SolverError::BadConfig {
                context: format!(
                    "mlp spec needs positive widths, got input {} hidden {:?}",
                    self.input_dim, self.hidden
                ),
            });
        }
        Ok(())
    }

    /// Width of the transformed feature space the convex head sees.
    pub fn output_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

impl MlpParams {
    /// He-style initialization: N(0, 2/fan_in) weights, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<MlpParams, SolverError> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = spec.input_dim;
        for &width in &spec.hidden {
            let scale = (2.0 / fan_in as f64).sqrt();
            let mut w = Array2::zeros((width, fan_in));
            for v in w.iter_mut() {
                *v = scale * rng.normal();
            }
            layers.push(MlpLayer { w, b: Array1::zeros(width) });
            fan_in = width;
        }
        Ok(MlpParams { layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    fn unflatten_into(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[at];
                at += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        debug_assert_eq!(at, flat.len());
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.w.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

/// Apply the inner layers: x flows through ReLU(x W^T + b) per layer. With no
/// layers the input passes through untouched.
pub fn mlp_forward(params: &MlpParams, x: &Array2<f64>) -> Result<Array2<f64>, SolverError> {
    let mut h = x.clone();
    for (li, layer) in params.layers.iter().enumerate() {
        if layer.w.ncols() != h.ncols() {
            return Err(SolverError::BadConfig {
                context: format!(
                    "layer {li} expects {} input features, got {}",
                    layer.w.ncols(),
                    h.ncols()
                ),
            });
        }
        let mut z = h.dot(&layer.w.t());
        for mut row in z.rows_mut() {
            row += &layer.b;
        }
        h = z.mapv(|v| v.max(0.0));
    }
    Ok(h)
}

fn forward_cached(
    params: &MlpParams,
    x: &Array2<f64>,
) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>), SolverError> {
    let mut hs = vec![x.clone()];
    let mut zs = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let h_prev = hs.last().unwrap();
        if layer.w.ncols() != h_prev.ncols() {
            return Err(SolverError::BadConfig {
                context: format!(
                    "layer {li} expects {} input features, got {}",
                    layer.w.ncols(),
                    h_prev.ncols()
                ),
            });
        }
        let mut z = h_prev.dot(&layer.w.t());
        for mut row in z.rows_mut() {
            row += &layer.b;
        }
        hs.push(z.mapv(|v| v.max(0.0)));
        zs.push(z);
    }
    Ok((zs, hs))
}

/// Gradient of the fixed-head objective over the listed data rows, with the
/// fit part scaled by `fit_scale` (used by minibatching to keep the stochastic
/// gradient an unbiased estimate of the full one; the decay term stays exact).
fn inner_grad_rows(
    params: &MlpParams,
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    rows: &[usize],
    u: &Array1<f64>,
    alpha: f64,
    fit_scale: f64,
) -> Result<MlpParams, SolverError> {
    let d = gs.feature_dim();
    let p = gs.pattern_count();
    if u.len() != gs.coef_len() {
        return Err(SolverError::BadConfig {
            context: format!("head has length {}, want {}", u.len(), gs.coef_len()),
        });
    }
    let m = rows.len();
    let x_b = x.select(Axis(0), rows);
    let (zs, hs) = forward_cached(params, &x_b)?;
    let x_tilde = hs.last().unwrap();
    if x_tilde.ncols() != d {
        return Err(SolverError::BadConfig {
            context: format!(
                "transformed features have width {}, gate set expects {d}",
                x_tilde.ncols()
            ),
        });
    }

    let mut r = Array1::<f64>::zeros(m);
    let mut diffs = Vec::with_capacity(p);
    for i in 0..p {
        let pos = u.slice(s![i * d..(i + 1) * d]);
        let neg = u.slice(s![(p + i) * d..(p + i + 1) * d]);
        let c = &pos - &neg;
        let t = x_tilde.dot(&c);
        let mask = gs.mask(i);
        for (bi, &row) in rows.iter().enumerate() {
            if mask[row] {
                r[bi] += t[bi];
            }
        }
        diffs.push(c);
    }
    for (bi, &row) in rows.iter().enumerate() {
        r[bi] -= y[row];
    }

    let mut dh = Array2::<f64>::zeros((m, d));
    for (i, c) in diffs.iter().enumerate() {
        let mask = gs.mask(i);
        for (bi, &row) in rows.iter().enumerate() {
            if mask[row] {
                let coef = 2.0 * r[bi] * fit_scale;
                for j in 0..d {
                    dh[[bi, j]] += coef * c[j];
                }
            }
        }
    }

    let mut grads: Vec<MlpLayer> = params
        .layers
        .iter()
        .map(|l| MlpLayer { w: Array2::zeros(l.w.dim()), b: Array1::zeros(l.b.len()) })
        .collect();
    for l in (0..params.layers.len()).rev() {
        let dz = {
            let mut dz = dh;
            dz.zip_mut_with(&zs[l], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            dz
        };
        grads[l].w = &dz.t().dot(&hs[l]) + &params.layers[l].w.mapv(|w| alpha * w);
        grads[l].b = dz.sum_axis(Axis(0));
        dh = dz.dot(&params.layers[l].w);
    }
    Ok(MlpParams { layers: grads })
}

/// Exact gradient of ||F_{X~} u - y||^2 + (alpha/2) sum ||W_l||_F^2 in the
/// inner-layer parameters, with masks and head fixed.
pub fn am_inner_grad(
    params: &MlpParams,
    x: &Array2<f64>,
    y: &Array1<f64>,
    gs: &GateSet,
    u: &Array1<f64>,
    alpha: f64,
) -> Result<MlpParams, SolverError> {
    if x.nrows() != gs.row_count() || y.len() != x.nrows() {
        return Err(SolverError::BadConfig {
            context: format!(
                "data has {} rows, labels {}, gate set expects {}",
                x.nrows(),
                y.len(),
                gs.row_count()
            ),
        });
    }
    let rows: Vec<usize> = (0..x.nrows()).collect();
    inner_grad_rows(params, x, y, gs, &rows, u, alpha, 1.0)
}

/// Learning-rate-free D-Adaptation applied to Adam. The distance estimate d
/// only ever grows; parameters, moments and the running numerator all live on
/// a single flat vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DAdaptAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub d: f64,
    r: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
}

impl DAdaptAdam {
    pub fn new(dim: usize) -> DAdaptAdam {
        DAdaptAdam {
            lr: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            d: 1e-6,
            r: 0.0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            s: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(g.len(), self.m.len());
        let dlr = self.d * self.lr;
        let sqb2 = self.beta2.sqrt();
        let mut numerator = 0.0;
        let mut sk_l1 = 0.0;
        for i in 0..x.len() {
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let denom = self.v[i].sqrt() + self.eps;
            numerator += dlr * g[i] * self.s[i] / denom;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * dlr * g[i];
            self.s[i] = sqb2 * self.s[i] + (1.0 - sqb2) * dlr * g[i];
            sk_l1 += self.s[i].abs();
            x[i] -= self.m[i] / denom;
        }
        self.r = sqb2 * self.r + (1.0 - sqb2) * numerator;
        if sk_l1 > 0.0 {
            self.d = self.d.max(self.r / ((1.0 - sqb2) * sk_l1));
        }
    }
}

/// Plain Adam with a fixed learning rate, kept as a debugging fallback.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        assert_eq!(x.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            x[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InnerOptimizer {
    #[default]
    DadaptAdam,
    AdamFixedLr,
}

enum OptState {
    Dadapt(DAdaptAdam),
    Fixed(Adam),
}

impl OptState {
    fn step(&mut self, x: &mut [f64], g: &[f64]) {
        match self {
            OptState::Dadapt(o) => o.step(x, g),
            OptState::Fixed(o) => o.step(x, g),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AmConfig {
    /// Inner-layer weight decay; the paper-form objective carries alpha/2.
    pub alpha: f64,
    pub outer_iters: usize,
    pub cronos_iters_per_outer: usize,
    /// Epochs of inner-layer steps per outer round; 0 freezes the net.
    pub inner_epochs: usize,
    pub minibatch: usize,
    pub optimizer: InnerOptimizer,
    /// Fixed learning rate for the Adam fallback.
    pub adam_lr: f64,
    /// Keep the gate vectors across outer rounds (masks recomputed on the new
    /// features, convex state warm-started) instead of resampling and
    /// restarting from zero.
    pub freeze_gates: bool,
    pub seed: u64,
}

impl Default for AmConfig {
    fn default() -> Self {
        AmConfig {
            alpha: 1e-4,
            outer_iters: 5,
            cronos_iters_per_outer: 5,
            inner_epochs: 1,
            minibatch: 64,
            optimizer: InnerOptimizer::DadaptAdam,
            adam_lr: 1e-3,
            freeze_gates: false,
            seed: 0,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |context: String| Err(SolverError::BadConfig { context });
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if self.outer_iters == 0 || self.cronos_iters_per_outer == 0 {
            return bad("outer_iters and cronos_iters_per_outer must be at least 1".to_string());
        }
        if self.minibatch == 0 {
            return bad("minibatch must be at least 1".to_string());
        }
        if !(self.adam_lr > 0.0) {
            return bad(format!("adam_lr must be positive, got {}", self.adam_lr));
        }
        Ok(())
    }
}

/// One outer round, measured right after the convex phase so the reported
/// accuracies use a consistent (features, gates, head) triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub obj: f64,
    pub resid_uv: f64,
    pub resid_gus: f64,
    pub pcg_iters: usize,
    pub wall_ms: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug)]
pub struct AmResult {
    pub params: MlpParams,
    pub state: ConvexState,
    pub gates: GateSet,
    pub history: IterHistory,
    pub outer: Vec<OuterRecord>,
}

/// Predictions of the full model on new rows: push the rows through the inner
/// layers, then gate with the stored vectors.
pub fn am_predict(
    params: &MlpParams,
    gs: &GateSet,
    u: &Array1<f64>,
    x_new: &Array2<f64>,
) -> Result<Array1<f64>, SolverError> {
    let x_tilde = mlp_forward(params, x_new)?;
    Ok(gs.predict(&x_tilde, u)?)
}

/// Fraction of sign agreements, with a zero prediction counted as +1.
pub fn binary_accuracy(pred: &Array1<f64>, y: &Array1<f64>) -> f64 {
    assert_eq!(pred.len(), y.len());
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(y.iter())
        .filter(|(&p, &yi)| {
            let cls = if p >= 0.0 { 1.0 } else { -1.0 };
            cls == yi
        })
        .count();
    hits as f64 / pred.len() as f64
}

/// Alternating minimization. With no inner layers the net contributes
/// nothing, so the whole run degenerates to one convex solve over the raw
/// features for the full iteration budget; otherwise each outer round
/// resamples gates on the current features and restarts the convex state,
/// unless `freeze_gates` keeps the gates and warm-starts.
pub fn cronos_am_solve(
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &MlpSpec,
    cfg: &SolverConfig,
    am: &AmConfig,
    val: Option<(&Array2<f64>, &Array1<f64>)>,
) -> Result<AmResult, SolverError> {
    cfg.validate()?;
    am.validate()?;
    spec.validate()?;
    if spec.input_dim != x.ncols() {
        return Err(SolverError::BadConfig {
            context: format!("spec expects {} input features, data has {}", spec.input_dim, x.ncols()),
        });
    }
    let mut am_rng = Rng::new(am.seed);
    let mut params = MlpParams::init(spec, &mut am_rng)?;

    if params.layers.is_empty() {
        let gs = GateSet::sample(x, cfg.patterns, cfg.gate_sampling, &mut am_rng)?;
        let mut flat_cfg = cfg.clone();
        flat_cfg.admm_iters = am.outer_iters * am.cronos_iters_per_outer;
        let SolveResult { state, history, .. } = cronos_solve(x, y, &gs, &flat_cfg)?;
        let train_pred = am_predict(&params, &gs, &state.u, x)?;
        let train_acc = binary_accuracy(&train_pred, y);
        let val_acc = match val {
            Some((xv, yv)) => Some(binary_accuracy(&am_predict(&params, &gs, &state.u, xv)?, yv)),
            None => None,
        };
        let last = history.records.last().cloned();
        let outer = vec![OuterRecord {
            outer: 1,
            obj: last.as_ref().map_or(f64::NAN, |r| r.obj),
            resid_uv: last.as_ref().map_or(f64::NAN, |r| r.resid_uv),
            resid_gus: last.as_ref().map_or(f64::NAN, |r| r.resid_gus),
            pcg_iters: history.records.iter().map(|r| r.pcg_iters).sum(),
            wall_ms: history.records.iter().map(|r| r.wall_ms).sum(),
            train_acc,
            val_acc,
        }];
        return Ok(AmResult { params, state, gates: gs, history, outer });
    }

    let mut opt = match am.optimizer {
        InnerOptimizer::DadaptAdam => OptState::Dadapt(DAdaptAdam::new(params.param_count())),
        InnerOptimizer::AdamFixedLr => OptState::Fixed(Adam::new(params.param_count(), am.adam_lr)),
    };

    let n = x.nrows();
    let mut gates: Option<GateSet> = None;
    let mut state: Option<ConvexState> = None;
    let mut history = IterHistory::default();
    let mut outer_records = Vec::with_capacity(am.outer_iters);

    for t in 1..=am.outer_iters {
        let t0 = Instant::now();
        let x_tilde = mlp_forward(&params, x)?;

        let gs = match (&gates, am.freeze_gates) {
            (Some(prev), true) => prev.remasked(&x_tilde)?,
            _ => GateSet::sample(&x_tilde, cfg.patterns, cfg.gate_sampling, &mut am_rng)?,
        };
        let mut inner_cfg = cfg.clone();
        inner_cfg.admm_iters = am.cronos_iters_per_outer;
        inner_cfg.seed = cfg.seed.wrapping_add(t as u64 - 1);
        // A frozen-gate round continues the same convex program, so the
        // inexactness schedule keeps tightening from where it left off;
        // resampled gates change the program and start a fresh solve.
        let solved = match (state.take(), am.freeze_gates) {
            (Some(prev), true) => cronos_resume(
                &x_tilde,
                y,
                &gs,
                &inner_cfg,
                prev,
                (t - 1) * am.cronos_iters_per_outer,
            )?,
            _ => cronos_solve(&x_tilde, y, &gs, &inner_cfg)?,
        };

        let round_pcg: usize = solved.history.records.iter().map(|r| r.pcg_iters).sum();
        let base_iter = history.len();
        for (j, mut rec) in solved.history.records.iter().cloned().enumerate() {
            rec.iter = base_iter + j + 1;
            history.records.push(rec);
        }
        let last = solved.history.records.last().cloned();

        let train_pred = gs.predict(&x_tilde, &solved.state.u)?;
        let train_acc = binary_accuracy(&train_pred, y);
        let val_acc = match val {
            Some((xv, yv)) => {
                Some(binary_accuracy(&am_predict(&params, &gs, &solved.state.u, xv)?, yv))
            }
            None => None,
        };

        if am.inner_epochs > 0 {
            let mut flat = params.flatten();
            let mut idx: Vec<usize> = (0..n).collect();
            for _ in 0..am.inner_epochs {
                am_rng.shuffle(&mut idx);
                for chunk in idx.chunks(am.minibatch) {
                    let fit_scale = n as f64 / chunk.len() as f64;
                    let grads = inner_grad_rows(
                        &params,
                        x,
                        y,
                        &gs,
                        chunk,
                        &solved.state.u,
                        am.alpha,
                        fit_scale,
                    )?;
                    let gflat = grads.flatten();
                    opt.step(&mut flat, &gflat);
                    params.unflatten_into(&flat);
                }
            }
        }

        outer_records.push(OuterRecord {
            outer: t,
            obj: last.as_ref().map_or(f64::NAN, |r| r.obj),
            resid_uv: last.as_ref().map_or(f64::NAN, |r| r.resid_uv),
            resid_gus: last.as_ref().map_or(f64::NAN, |r| r.resid_gus),
            pcg_iters: round_pcg,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            train_acc,
            val_acc,
        });

        gates = Some(gs);
        state = Some(solved.state);
    }

    Ok(AmResult {
        params,
        state: state.expect("at least one outer round"),
        gates: gates.expect("at least one outer round"),
        history,
        outer: outer_records,
    })
}
