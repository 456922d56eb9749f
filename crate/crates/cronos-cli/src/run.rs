//! Training and evaluation pipelines behind the subcommands.
//!
//! A train run writes three files into the output directory: `metrics.jsonl`
//! with one record per iteration (per outer round for the AM task),
//! `summary.json`, and `checkpoint.json`. Metrics are streamed and flushed
//! line by line for the convex tasks, so a crashed run still leaves partial
//! history behind. Wall times are recorded as zero unless timings are
//! enabled, which keeps metrics files byte-identical across reruns of the
//! same config.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cronos::am::{
    am_predict, binary_accuracy, cronos_am_solve, MlpParams, MlpSpec,
};
use cronos::checkpoint::Checkpoint;
use cronos::linops::GateSet;
use cronos::solver::{
    cronos_general_solve_observed, cronos_solve_observed, evaluate_objective, ConvexState,
    IterRecord, LogisticLoss, SmoothLoss, SquaredLoss,
};
use cronos::Rng;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DataSource, LossKind, RunConfig, SyntheticKind, Task};
use crate::data::{self, DataError, Dataset, Standardization};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solver(#[from] cronos::solver::SolverError),
    #[error(transparent)]
    Checkpoint(#[from] cronos::checkpoint::CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}")]
    Invalid { context: String },
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub schema_version: u32,
    pub peak_val_acc: Option<f64>,
    pub final_obj: f64,
    pub total_wall_ms: f64,
}

/// One metrics line. The accuracy fields appear only for the AM task.
#[derive(Serialize)]
struct MetricsLine {
    iter: usize,
    obj: f64,
    resid_uv: f64,
    resid_gus: f64,
    pcg_iters: usize,
    wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_acc: Option<f64>,
}

struct MetricsWriter {
    file: fs::File,
    path: PathBuf,
    timings: bool,
}

impl MetricsWriter {
    fn create(path: &Path, timings: bool) -> Result<MetricsWriter, RunError> {
        let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        Ok(MetricsWriter { file, path: path.to_path_buf(), timings })
    }

    fn write(&mut self, mut line: MetricsLine) -> Result<(), RunError> {
        if !self.timings {
            line.wall_ms = 0.0;
        }
        let mut text = serde_json::to_string(&line).expect("metrics line serializes");
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| io_err(&self.path, e))
    }
}

fn convex_line(r: &IterRecord) -> MetricsLine {
    MetricsLine {
        iter: r.iter,
        obj: r.obj,
        resid_uv: r.resid_uv,
        resid_gus: r.resid_gus,
        pcg_iters: r.pcg_iters,
        wall_ms: r.wall_ms,
        train_acc: None,
        val_acc: None,
    }
}

/// Everything a finished training run leaves in memory; handed to the writer
/// stage and to tests.
pub struct TrainOutcome {
    pub summary: Summary,
    pub checkpoint: Checkpoint,
    pub stats: Option<Standardization>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, RunError> {
    let mut rng = Rng::new(cfg.seed);
    let (x, y) = match cfg.data.source {
        DataSource::Synthetic => match cfg.data.kind {
            SyntheticKind::Blobs => data::gen_blobs(cfg.data.n, cfg.data.d, cfg.data.noise, &mut rng),
            SyntheticKind::PlantedRelu => {
                let (x, y, _) = data::gen_planted_relu(cfg.data.n, cfg.data.d, cfg.data.noise, &mut rng);
                (x, y)
            }
        },
        DataSource::Csv => {
            let path = cfg.data.path.as_ref().expect("validated");
            data::load_csv(path, cfg.data.label_column)?
        }
        DataSource::Raw => {
            let path = cfg.data.path.as_ref().expect("validated");
            data::load_raw(path)?
        }
    };
    let mut ds = Dataset::split(x, y, cfg.data.val_fraction, &mut rng)?;
    if cfg.standardize {
        ds.standardize();
    }
    Ok(ds)
}

fn val_view(ds: &Dataset) -> Option<(&Array2<f64>, &Array1<f64>)> {
    (ds.x_val.nrows() > 0).then_some((&ds.x_val, &ds.y_val))
}

/// Accuracy of the convex model on a split, None when the split is empty.
fn convex_accuracy(
    gs: &GateSet,
    u: &Array1<f64>,
    x: &Array2<f64>,
    y: &Array1<f64>,
) -> Result<Option<f64>, RunError> {
    if x.nrows() == 0 {
        return Ok(None);
    }
    let pred = gs.predict(x, u).map_err(cronos::solver::SolverError::from)?;
    Ok(Some(binary_accuracy(&pred, y)))
}

fn run_convex(
    cfg: &RunConfig,
    ds: &Dataset,
    metrics: &mut MetricsWriter,
) -> Result<TrainOutcome, RunError> {
    let started = Instant::now();
    let mut gate_rng = Rng::new(cfg.seed);
    let gs = GateSet::sample(
        &ds.x_train,
        cfg.solver.patterns,
        cfg.solver.gate_sampling,
        &mut gate_rng,
    )
    .map_err(cronos::solver::SolverError::from)?;
    let mut obs_err: Option<RunError> = None;
    let mut observe = |_: &ConvexState, r: &IterRecord| {
        if obs_err.is_none() {
            if let Err(e) = metrics.write(convex_line(r)) {
                obs_err = Some(e);
            }
        }
    };
    let result = match cfg.task {
        Task::Cronos => {
            cronos_solve_observed(&ds.x_train, &ds.y_train, &gs, &cfg.solver, &mut observe)?
        }
        Task::CronosGeneral => {
            let loss: Box<dyn SmoothLoss> = match cfg.general.loss {
                LossKind::LeastSquares => Box::new(SquaredLoss),
                LossKind::Logistic => Box::new(LogisticLoss { sigma: cfg.general.sigma }),
            };
            cronos_general_solve_observed(
                &ds.x_train,
                &ds.y_train,
                &gs,
                &cfg.solver,
                loss.as_ref(),
                cfg.general.refresh_every,
                &mut observe,
            )?
        }
        Task::CronosAm => unreachable!("dispatched separately"),
    };
    if let Some(e) = obs_err {
        return Err(e);
    }
    let report = evaluate_objective(&ds.x_train, &ds.y_train, &gs, &result.state, cfg.solver.beta)?;
    let val_acc = convex_accuracy(&gs, &result.state.u, &ds.x_val, &ds.y_val)?;
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        peak_val_acc: val_acc,
        final_obj: report.loss_term + report.reg_term,
        total_wall_ms: if cfg.timings {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    };
    let checkpoint = Checkpoint { mlp: None, gates: gs, state: result.state };
    Ok(TrainOutcome { summary, checkpoint, stats: ds.stats.clone() })
}

fn run_am(
    cfg: &RunConfig,
    ds: &Dataset,
    metrics: &mut MetricsWriter,
) -> Result<TrainOutcome, RunError> {
    let started = Instant::now();
    let spec = MlpSpec { input_dim: ds.x_train.ncols(), hidden: cfg.am.hidden.clone() };
    let res = cronos_am_solve(
        &ds.x_train,
        &ds.y_train,
        &spec,
        &cfg.solver,
        &cfg.am.cfg,
        val_view(ds),
    )?;
    for rec in &res.outer {
        metrics.write(MetricsLine {
            iter: rec.outer,
            obj: rec.obj,
            resid_uv: rec.resid_uv,
            resid_gus: rec.resid_gus,
            pcg_iters: rec.pcg_iters,
            wall_ms: rec.wall_ms,
            train_acc: Some(rec.train_acc),
            val_acc: rec.val_acc,
        })?;
    }
    let final_obj = res.outer.last().map(|r| r.obj).unwrap_or(f64::NAN);
    let peak_val_acc = res
        .outer
        .iter()
        .filter_map(|r| r.val_acc)
        .max_by(f64::total_cmp);
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        peak_val_acc,
        final_obj,
        total_wall_ms: if cfg.timings {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    };
    let checkpoint = Checkpoint { mlp: Some(res.params), gates: res.gates, state: res.state };
    Ok(TrainOutcome { summary, checkpoint, stats: ds.stats.clone() })
}

/// One-vs-rest reduction over the distinct labels. Experimental: it reuses
/// the binary pipeline per class with +/-1 targets and reports multi-class
/// accuracy by highest score. Writes one checkpoint per class and no
/// per-iteration metrics.
fn run_multiclass(cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<TrainOutcome, RunError> {
    let started = Instant::now();
    if cfg.task == Task::CronosAm {
        return Err(RunError::Invalid {
            context: "multiclass supports only the convex tasks".to_string(),
        });
    }
    let mut classes: Vec<i64> = ds
        .y_train
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 {
                return Err(RunError::Invalid {
                    context: format!("multiclass needs integer labels, got {v}"),
                });
            }
            Ok(v as i64)
        })
        .collect::<Result<_, _>>()?;
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(RunError::Invalid {
            context: format!("multiclass needs at least 2 classes, got {}", classes.len()),
        });
    }
    let mut gate_rng = Rng::new(cfg.seed);
    let gs = GateSet::sample(
        &ds.x_train,
        cfg.solver.patterns,
        cfg.solver.gate_sampling,
        &mut gate_rng,
    )
    .map_err(cronos::solver::SolverError::from)?;
    let mut scores_train = Array2::zeros((ds.x_train.nrows(), classes.len()));
    let mut scores_val = Array2::zeros((ds.x_val.nrows(), classes.len()));
    let mut last_state: Option<ConvexState> = None;
    let mut obj_sum = 0.0;
    for (ci, &cls) in classes.iter().enumerate() {
        let y_bin = ds.y_train.mapv(|v| if v as i64 == cls { 1.0 } else { -1.0 });
        let result = cronos::solver::cronos_solve(&ds.x_train, &y_bin, &gs, &cfg.solver)?;
        let report =
            evaluate_objective(&ds.x_train, &y_bin, &gs, &result.state, cfg.solver.beta)?;
        obj_sum += report.loss_term + report.reg_term;
        let pred = gs.predict(&ds.x_train, &result.state.u).map_err(cronos::solver::SolverError::from)?;
        scores_train.column_mut(ci).assign(&pred);
        if ds.x_val.nrows() > 0 {
            let pred = gs.predict(&ds.x_val, &result.state.u).map_err(cronos::solver::SolverError::from)?;
            scores_val.column_mut(ci).assign(&pred);
        }
        let ck = Checkpoint { mlp: None, gates: gs.clone(), state: result.state.clone() };
        ck.save(&out.join(format!("checkpoint_class_{cls}.json")))?;
        last_state = Some(result.state);
    }
    let argmax = |scores: &Array2<f64>, i: usize| {
        let row = scores.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        classes[best]
    };
    let acc = |scores: &Array2<f64>, y: &Array1<f64>| {
        if y.is_empty() {
            return None;
        }
        let hits = (0..y.len()).filter(|&i| argmax(scores, i) == y[i] as i64).count();
        Some(hits as f64 / y.len() as f64)
    };
    let val_acc = acc(&scores_val, &ds.y_val);
    let train_acc = acc(&scores_train, &ds.y_train).unwrap_or(0.0);
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        peak_val_acc: val_acc.or(Some(train_acc)),
        final_obj: obj_sum,
        total_wall_ms: if cfg.timings {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    };
    let checkpoint = Checkpoint {
        mlp: None,
        gates: gs,
        state: last_state.expect("at least two classes solved"),
    };
    Ok(TrainOutcome { summary, checkpoint, stats: ds.stats.clone() })
}

/// Run training per the config and write metrics, summary, checkpoint, and
/// (when standardizing) the fitted feature statistics into the output
/// directory.
pub fn train(cfg: &RunConfig) -> Result<Summary, RunError> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| RunError::Invalid { context: "train needs an output directory; pass --out".to_string() })?;
    let ds = load_dataset(cfg)?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let outcome = if cfg.multiclass {
        run_multiclass(cfg, &ds, &out)?
    } else {
        let mut metrics = MetricsWriter::create(&out.join("metrics.jsonl"), cfg.timings)?;
        match cfg.task {
            Task::Cronos | Task::CronosGeneral => run_convex(cfg, &ds, &mut metrics)?,
            Task::CronosAm => run_am(cfg, &ds, &mut metrics)?,
        }
    };
    write_json(&out.join("summary.json"), &outcome.summary)?;
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    if let Some(stats) = &outcome.stats {
        write_json(&out.join("stats.json"), stats)?;
    }
    Ok(outcome.summary)
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
}

/// Score a checkpoint against a dataset. The dataset is taken whole, with no
/// splitting; `stats`, when given, should point at the `stats.json` of the
/// training run so features are transformed consistently.
pub fn eval(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    stats_path: Option<&Path>,
) -> Result<EvalReport, RunError> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let mut cfg = cfg.clone();
    cfg.data.val_fraction = 0.0;
    let mut ds = load_dataset(&cfg)?;
    if let Some(path) = stats_path {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let stats: Standardization =
            serde_json::from_str(&text).map_err(|e| RunError::Invalid {
                context: format!("{}: {e}", path.display()),
            })?;
        if stats.mean.len() != ds.x_train.ncols() {
            return Err(RunError::Invalid {
                context: format!(
                    "stats cover {} features, data has {}",
                    stats.mean.len(),
                    ds.x_train.ncols()
                ),
            });
        }
        stats.apply(&mut ds.x_train);
    }
    let params = ck.mlp.unwrap_or(MlpParams { layers: Vec::new() });
    let pred = am_predict(&params, &ck.gates, &ck.state.u, &ds.x_train)?;
    Ok(EvalReport {
        n: ds.x_train.nrows(),
        accuracy: binary_accuracy(&pred, &ds.y_train),
    })
}

/// Generate a synthetic dataset and write it in the raw format.
pub fn gen_data(cfg: &RunConfig, path: &Path) -> Result<usize, RunError> {
    let mut rng = Rng::new(cfg.seed);
    let (x, y) = match cfg.data.kind {
        SyntheticKind::Blobs => data::gen_blobs(cfg.data.n, cfg.data.d, cfg.data.noise, &mut rng),
        SyntheticKind::PlantedRelu => {
            let (x, y, _) = data::gen_planted_relu(cfg.data.n, cfg.data.d, cfg.data.noise, &mut rng);
            (x, y)
        }
    };
    data::save_raw(path, &x, &y)?;
    Ok(x.nrows())
}
