//! Run configuration: defaults, TOML file, environment, flags.
//!
//! Precedence, lowest to highest: built-in defaults, config file, `CRONOS_*`
//! environment variables, command-line flags. Every layer is optional.

use std::path::{Path, PathBuf};

use cronos::am::AmConfig;
use cronos::solver::SolverConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {context}")]
    Invalid { context: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

fn invalid(context: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { context: context.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Least-squares convex solve.
    Cronos,
    /// Convex solve under a configurable smooth loss.
    CronosGeneral,
    /// Alternating minimization for deeper nets.
    CronosAm,
}

impl Default for Task {
    fn default() -> Self {
        Task::Cronos
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Task, String> {
        match s {
            "cronos" => Ok(Task::Cronos),
            "cronos-general" => Ok(Task::CronosGeneral),
            "cronos-am" => Ok(Task::CronosAm),
            other => Err(format!(
                "unknown task {other:?}, expected cronos, cronos-general, or cronos-am"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    #[default]
    Blobs,
    PlantedRelu,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<SyntheticKind, String> {
        match s {
            "blobs" => Ok(SyntheticKind::Blobs),
            "planted-relu" => Ok(SyntheticKind::PlantedRelu),
            other => Err(format!("unknown kind {other:?}, expected blobs or planted-relu")),
        }
    }
}

impl std::str::FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<DataSource, String> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "csv" => Ok(DataSource::Csv),
            "raw" => Ok(DataSource::Raw),
            other => Err(format!("unknown source {other:?}, expected synthetic, csv, or raw")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic generator, consulted when source = "synthetic".
    pub kind: SyntheticKind,
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    /// Input path for csv and raw sources.
    pub path: Option<PathBuf>,
    /// CSV label column, 0-based. Default: last column.
    pub label_column: Option<usize>,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            kind: SyntheticKind::Blobs,
            n: 200,
            d: 10,
            noise: 0.5,
            path: None,
            label_column: None,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    LeastSquares,
    Logistic,
}

/// Settings consulted only by the cronos-general task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralConfig {
    pub loss: LossKind,
    /// Proximal weight of the Taylor-model u-step.
    pub sigma: f64,
    /// Preconditioner refresh cadence in outer iterations.
    pub refresh_every: usize,
}

impl Default for GeneralConfig {
    fn default() -> Self {
        GeneralConfig { loss: LossKind::Logistic, sigma: 1e-3, refresh_every: 5 }
    }
}

/// The alternating-minimization section: solver-side knobs plus the
/// architecture.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AmSection {
    /// Hidden-layer widths; empty means the two-layer model.
    pub hidden: Vec<usize>,
    #[serde(flatten)]
    pub cfg: AmConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    /// Seeds data generation and the train/validation split. Solver and AM
    /// sketch seeds live in their own sections.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub standardize: bool,
    /// Record real wall-clock times in metrics. Off by default so identical
    /// configs produce byte-identical metrics files.
    pub timings: bool,
    /// One-vs-rest reduction for integer multi-class labels. Experimental.
    pub multiclass: bool,
    pub data: DataConfig,
    pub solver: SolverConfig,
    pub general: GeneralConfig,
    pub am: AmSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Cronos,
            seed: 0,
            out: None,
            standardize: false,
            timings: false,
            multiclass: false,
            data: DataConfig::default(),
            solver: SolverConfig::default(),
            general: GeneralConfig::default(),
            am: AmSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reject anything the run would trip over later, before any output file
    /// is created.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.solver;
        if !(s.rho.is_finite() && s.rho > 0.0) {
            return Err(invalid(format!("rho must be positive and finite, got {}", s.rho)));
        }
        if !(s.beta.is_finite() && s.beta > 0.0) {
            return Err(invalid(format!("beta must be positive and finite, got {}", s.beta)));
        }
        if s.patterns == 0 {
            return Err(invalid("patterns must be at least 1"));
        }
        if s.rank == 0 {
            return Err(invalid("rank must be at least 1"));
        }
        if s.admm_iters == 0 || s.pcg_maxit == 0 {
            return Err(invalid("admm_iters and pcg_maxit must be at least 1"));
        }
        if !(s.tol_exponent.is_finite() && s.tol_exponent > 0.0) {
            return Err(invalid(format!(
                "tol_exponent must be positive and finite, got {}",
                s.tol_exponent
            )));
        }
        if let Some(g) = s.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(invalid(format!("gamma must be positive and finite, got {g}")));
            }
        }
        match self.data.source {
            DataSource::Synthetic => {
                if self.data.n == 0 || self.data.d == 0 {
                    return Err(invalid(format!(
                        "synthetic data needs positive n and d, got {}x{}",
                        self.data.n, self.data.d
                    )));
                }
                if !(self.data.noise.is_finite() && self.data.noise >= 0.0) {
                    return Err(invalid(format!("noise must be nonnegative, got {}", self.data.noise)));
                }
            }
            DataSource::Csv | DataSource::Raw => {
                if self.data.path.is_none() {
                    return Err(invalid("csv and raw sources need data.path"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(invalid(format!(
                "val_fraction must be in [0, 1), got {}",
                self.data.val_fraction
            )));
        }
        if self.task == Task::CronosAm {
            let a = &self.am.cfg;
            if !(a.alpha.is_finite() && a.alpha >= 0.0) {
                return Err(invalid(format!("alpha must be nonnegative, got {}", a.alpha)));
            }
            if a.outer_iters == 0 || a.cronos_iters_per_outer == 0 || a.minibatch == 0 {
                return Err(invalid(
                    "outer_iters, cronos_iters_per_outer, and minibatch must be at least 1",
                ));
            }
            if !(a.adam_lr.is_finite() && a.adam_lr > 0.0) {
                return Err(invalid(format!("adam_lr must be positive, got {}", a.adam_lr)));
            }
            if self.am.hidden.iter().any(|&w| w == 0) {
                return Err(invalid(format!("hidden widths must be positive, got {:?}", self.am.hidden)));
            }
        }
        if self.task == Task::CronosGeneral && !(self.general.sigma.is_finite() && self.general.sigma >= 0.0) {
            return Err(invalid(format!("sigma must be nonnegative, got {}", self.general.sigma)));
        }
        if self.task == Task::CronosGeneral && self.general.refresh_every == 0 {
            return Err(invalid("refresh_every must be at least 1"));
        }
        Ok(())
    }

    /// Overlay `CRONOS_*` environment variables. `lookup` abstracts
    /// `std::env::var` so tests can inject an environment.
    pub fn apply_env(
        &mut self,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.parse().map_err(|e| invalid(format!("{name}={raw:?}: {e}")))
        }
        fn parse_bool(name: &str, raw: &str) -> Result<bool, ConfigError> {
            match raw {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                other => Err(invalid(format!("{name}={other:?}: expected 0, 1, true, or false"))),
            }
        }
        macro_rules! over {
            ($name:literal, $slot:expr, $conv:expr) => {
                if let Some(raw) = lookup($name) {
                    $slot = $conv($name, &raw)?;
                }
            };
        }
        over!("CRONOS_TASK", self.task, parse::<Task>);
        over!("CRONOS_SEED", self.seed, parse::<u64>);
        if let Some(raw) = lookup("CRONOS_OUT") {
            self.out = Some(PathBuf::from(raw));
        }
        over!("CRONOS_STANDARDIZE", self.standardize, parse_bool);
        over!("CRONOS_TIMINGS", self.timings, parse_bool);
        over!("CRONOS_RHO", self.solver.rho, parse::<f64>);
        over!("CRONOS_BETA", self.solver.beta, parse::<f64>);
        over!("CRONOS_PATTERNS", self.solver.patterns, parse::<usize>);
        over!("CRONOS_RANK", self.solver.rank, parse::<usize>);
        over!("CRONOS_ADMM_ITERS", self.solver.admm_iters, parse::<usize>);
        over!("CRONOS_PCG_MAXIT", self.solver.pcg_maxit, parse::<usize>);
        over!("CRONOS_TOL_EXPONENT", self.solver.tol_exponent, parse::<f64>);
        over!("CRONOS_SOLVER_SEED", self.solver.seed, parse::<u64>);
        over!("CRONOS_ALPHA", self.am.cfg.alpha, parse::<f64>);
        over!("CRONOS_OUTER_ITERS", self.am.cfg.outer_iters, parse::<usize>);
        over!("CRONOS_ITERS_PER_OUTER", self.am.cfg.cronos_iters_per_outer, parse::<usize>);
        over!("CRONOS_INNER_EPOCHS", self.am.cfg.inner_epochs, parse::<usize>);
        over!("CRONOS_MINIBATCH", self.am.cfg.minibatch, parse::<usize>);
        Ok(())
    }
}

/// Flag-level overrides shared by subcommands; `None` means "not given".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML config file, applied before environment and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task to run: cronos, cronos-general, or cronos-am.
    #[arg(long)]
    pub task: Option<Task>,
    /// Seed for data generation and splitting.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for metrics, summary, and checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Data source: synthetic, csv, or raw.
    #[arg(long)]
    pub source: Option<DataSource>,
    /// Input data file for the csv and raw sources.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fraction of rows held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// ADMM penalty parameter.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Group-lasso weight.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Number of sampled gate patterns.
    #[arg(long)]
    pub patterns: Option<usize>,
    /// Preconditioner rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// ADMM iteration budget.
    #[arg(long)]
    pub admm_iters: Option<usize>,
    /// PCG iteration cap per u-step.
    #[arg(long)]
    pub pcg_maxit: Option<usize>,
    /// PCG tolerance schedule exponent.
    #[arg(long, allow_negative_numbers = true)]
    pub tol_exponent: Option<f64>,
    /// Solver sketch seed.
    #[arg(long)]
    pub solver_seed: Option<u64>,
    /// Standardize features, fitting on the training split.
    #[arg(long)]
    pub standardize: bool,
    /// Record real wall-clock times in metrics.
    #[arg(long)]
    pub timings: bool,
    /// One-vs-rest over integer labels. Experimental.
    #[arg(long)]
    pub multiclass: bool,
    /// Inner-layer weight decay for cronos-am.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Outer alternation rounds for cronos-am.
    #[arg(long)]
    pub outer_iters: Option<usize>,
    /// Convex iterations per outer round for cronos-am.
    #[arg(long)]
    pub iters_per_outer: Option<usize>,
    /// Inner optimizer epochs per outer round; 0 freezes the net.
    #[arg(long)]
    pub inner_epochs: Option<usize>,
    /// Inner minibatch size.
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Keep gate vectors across outer rounds instead of resampling.
    #[arg(long)]
    pub freeze_gates: bool,
    /// Comma-separated hidden widths for cronos-am, e.g. 16,16.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($opt:expr, $slot:expr) => {
                if let Some(v) = &$opt {
                    $slot = v.clone();
                }
            };
        }
        set!(self.task, cfg.task);
        set!(self.seed, cfg.seed);
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        set!(self.source, cfg.data.source);
        if let Some(path) = &self.data {
            cfg.data.path = Some(path.clone());
        }
        set!(self.val_fraction, cfg.data.val_fraction);
        set!(self.rho, cfg.solver.rho);
        set!(self.beta, cfg.solver.beta);
        set!(self.patterns, cfg.solver.patterns);
        set!(self.rank, cfg.solver.rank);
        set!(self.admm_iters, cfg.solver.admm_iters);
        set!(self.pcg_maxit, cfg.solver.pcg_maxit);
        set!(self.tol_exponent, cfg.solver.tol_exponent);
        set!(self.solver_seed, cfg.solver.seed);
        if self.standardize {
            cfg.standardize = true;
        }
        if self.timings {
            cfg.timings = true;
        }
        if self.multiclass {
            cfg.multiclass = true;
        }
        set!(self.alpha, cfg.am.cfg.alpha);
        set!(self.outer_iters, cfg.am.cfg.outer_iters);
        set!(self.iters_per_outer, cfg.am.cfg.cronos_iters_per_outer);
        set!(self.inner_epochs, cfg.am.cfg.inner_epochs);
        set!(self.minibatch, cfg.am.cfg.minibatch);
        if self.freeze_gates {
            cfg.am.cfg.freeze_gates = true;
        }
        set!(self.hidden, cfg.am.hidden);
    }

    /// Resolve the full precedence stack into a validated config.
    pub fn resolve(
        &self,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_env(lookup)?;
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn bare_flags_resolve_against_defaults() {
        let ov = Overrides { seed: Some(4), rank: Some(6), ..Overrides::default() };
        let cfg = ov.resolve(&no_env).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.solver.rank, 6);
        assert_eq!(cfg.solver.rho, RunConfig::default().solver.rho);
    }

    #[test]
    fn file_env_flag_precedence() {
        let dir = std::env::temp_dir().join(format!("cronos-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(
            &path,
            "seed = 1\n\n[solver]\nrho = 0.5\nbeta = 0.25\n\n[data]\nn = 33\n",
        )
        .unwrap();
        let ov = Overrides {
            config: Some(path),
            rho: Some(2.0),
            ..Overrides::default()
        };
        let env = |name: &str| match name {
            "CRONOS_RHO" => Some("1.5".to_string()),
            "CRONOS_SEED" => Some("7".to_string()),
            _ => None,
        };
        let cfg = ov.resolve(&env).unwrap();
        assert_eq!(cfg.solver.rho, 2.0);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.solver.beta, 0.25);
        assert_eq!(cfg.data.n, 33);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn env_parse_failure_is_a_config_error() {
        let mut cfg = RunConfig::default();
        let env = |name: &str| (name == "CRONOS_RHO").then(|| "fast".to_string());
        let err = cfg.apply_env(&env).unwrap_err().to_string();
        assert!(err.contains("CRONOS_RHO"), "{err}");
    }

    #[test]
    fn nonpositive_rho_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.solver.rho = 0.0;
        assert!(cfg.validate().is_err());
        cfg.solver.rho = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn file_sources_need_a_path() {
        let mut cfg = RunConfig::default();
        cfg.data.source = DataSource::Csv;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("data.path"), "{err}");
    }

    #[test]
    fn am_section_flattens_in_toml() {
        let text = "task = \"cronos-am\"\n\n[am]\nhidden = [16, 16]\nalpha = 0.01\nfreeze_gates = true\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.am.hidden, vec![16, 16]);
        assert_eq!(cfg.am.cfg.alpha, 0.01);
        assert!(cfg.am.cfg.freeze_gates);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_task_name_is_rejected() {
        let err = toml::from_str::<RunConfig>("task = \"cronos-dm\"\n").unwrap_err();
        assert!(err.to_string().contains("cronos-dm") || err.to_string().contains("variant"));
    }
}
