//! Run settings: built-in defaults, then a flat `key = value` file, then
//! command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dfx::solvers::GmresConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Discr {
    Fourier,
    Fd,
}

impl FromStr for Discr {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(Self::Fourier),
            "fd" => Ok(Self::Fd),
            _ => bail!("unknown discretization `{s}` (expected fourier or fd)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Gaussian,
    Constant,
    Mode,
}

impl FromStr for Profile {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "constant" => Ok(Self::Constant),
            "mode" => Ok(Self::Mode),
            _ => bail!("unknown profile `{s}` (expected gaussian, constant or mode)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: usize,
    pub spacing: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_tv: f64,
    pub gmres: GmresConfig,
    /// `None` picks a stable step from the grid spacing.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub snapshots: usize,
    pub discr: Discr,
    pub tol: f64,
    pub profile: Profile,
    pub mode: usize,
}

impl RunConfig {
    /// Settings of the full lens design run.
    pub fn lens_defaults() -> Self {
        Self {
            grid: 256,
            spacing: 1.0,
            seed: 42,
            out: PathBuf::from("out"),
            steps: 100,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.9,
            lambda_tv: 1e-4,
            gmres: GmresConfig {
                tol: 1e-3,
                restart: 50,
                maxiter: 1000,
            },
            dt: None,
            t_end: 2.0,
            snapshots: 5,
            discr: Discr::Fourier,
            tol: 1e-2,
            profile: Profile::Gaussian,
            mode: 4,
        }
    }

    pub fn heat_defaults() -> Self {
        Self {
            grid: 64,
            ..Self::lens_defaults()
        }
    }

    pub fn swap_defaults() -> Self {
        Self {
            grid: 128,
            ..Self::lens_defaults()
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| anyhow::anyhow!("config key `{key}`: cannot parse `{v}`: {e}"))
        }
        match key.replace('_', "-").as_str() {
            "grid" => self.grid = p(key, value)?,
            "spacing" => self.spacing = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "steps" => self.steps = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "lambda-tv" => self.lambda_tv = p(key, value)?,
            "gmres-tol" => self.gmres.tol = p(key, value)?,
            "gmres-restart" => self.gmres.restart = p(key, value)?,
            "gmres-maxiter" => self.gmres.maxiter = p(key, value)?,
            "dt" => self.dt = Some(p(key, value)?),
            "t-end" => self.t_end = p(key, value)?,
            "snapshots" => self.snapshots = p(key, value)?,
            "discr" => self.discr = p(key, value)?,
            "tol" => self.tol = p(key, value)?,
            "profile" => self.profile = p(key, value)?,
            "mode" => self.mode = p(key, value)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let map: BTreeMap<String, String> = dfx::io::parse_config(&text)?;
        for (k, v) in &map {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("spacing", self.spacing),
            ("lr", self.lr),
            ("gmres-tol", self.gmres.tol),
            ("t-end", self.t_end),
            ("tol", self.tol),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("`{k}` must be positive, got {v}");
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                bail!("`dt` must be positive, got {dt}");
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                bail!("`{k}` must lie in [0, 1), got {v}");
            }
        }
        if !(self.lambda_tv >= 0.0) {
            bail!("`lambda-tv` must be non-negative");
        }
        if self.grid < 4 {
            bail!("`grid` must be at least 4");
        }
        if self.gmres.restart == 0 || self.gmres.maxiter == 0 {
            bail!("gmres restart and maxiter must be at least 1");
        }
        if self.snapshots == 0 {
            bail!("`snapshots` must be at least 1");
        }
        Ok(())
    }
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Grid points per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Grid spacing.
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub gmres_tol: Option<f64>,
    #[arg(long)]
    pub gmres_restart: Option<usize>,
    #[arg(long)]
    pub gmres_maxiter: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct OptimArgs {
    /// Adam iterations.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Weight of the total variation term.
    #[arg(long)]
    pub lambda_tv: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct IntegArgs {
    /// Time step (default 0.1·dx²).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Number of evenly spaced snapshots, including the initial state.
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long, value_enum)]
    pub discr: Option<Discr>,
}

macro_rules! override_from {
    ($cfg:expr, $args:expr, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl CommonArgs {
    /// Loads the config file (if any) over `defaults`, then applies flags.
    pub fn resolve(&self, defaults: RunConfig) -> Result<RunConfig> {
        let mut cfg = defaults;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        override_from!(cfg, self, grid, spacing, seed, out);
        Ok(cfg)
    }
}

impl SolverArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.gmres_tol {
            cfg.gmres.tol = v;
        }
        if let Some(v) = self.gmres_restart {
            cfg.gmres.restart = v;
        }
        if let Some(v) = self.gmres_maxiter {
            cfg.gmres.maxiter = v;
        }
    }
}

impl OptimArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        override_from!(cfg, self, steps, lr, beta1, beta2, lambda_tv);
    }
}

impl IntegArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.dt.is_some() {
            cfg.dt = self.dt;
        }
        override_from!(cfg, self, t_end, snapshots, discr);
    }
}
