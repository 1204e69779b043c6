use std::path::Path;

use cplm_core::{LinearSolver, LmConfig, Method, Scale};
use serde::Deserialize;

use crate::args::SolverArgs;
use crate::error::CliError;

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub rank: Option<usize>,
    pub method: Option<Method>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub mu0: Option<f64>,
    pub nu0: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub linear_solver: Option<LinearSolver>,
    pub threads: Option<usize>,
    pub max_mu_escalations: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub rank: Option<usize>,
    pub scale: Scale,
    pub threads: usize,
    pub timings: bool,
    pub lm: LmConfig,
}

impl Settings {
    pub fn resolve(args: &SolverArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let d = LmConfig::default();
        let lm = LmConfig {
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(d.max_iters),
            tol: args.tol.or(file.tol).unwrap_or(d.tol),
            rel_tol: args.rel_tol.or(file.rel_tol).unwrap_or(d.rel_tol),
            grad_tol: args.grad_tol.or(file.grad_tol).unwrap_or(d.grad_tol),
            mu0: args.mu0.or(file.mu0).or(d.mu0),
            nu0: args.nu0.or(file.nu0).unwrap_or(d.nu0),
            gamma: args.gamma.or(file.gamma).unwrap_or(d.gamma),
            step_tol: args.step_tol.or(file.step_tol).unwrap_or(d.step_tol),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            method: args.method.or(file.method).unwrap_or(d.method),
            linear_solver: args.linear_solver.or(file.linear_solver).unwrap_or(d.linear_solver),
            max_mu_escalations: file.max_mu_escalations.unwrap_or(d.max_mu_escalations),
        };
        lm.validate().map_err(|e| CliError::usage(e.to_string()))?;
        let rank = args.rank.or(file.rank);
        if rank == Some(0) {
            return Err(CliError::usage("rank must be at least 1"));
        }
        let threads = args.threads.or(file.threads).unwrap_or(1);
        if threads == 0 {
            return Err(CliError::usage("threads must be at least 1"));
        }
        Ok(Self {
            rank,
            scale: args.scale.or(file.scale).unwrap_or_default(),
            threads,
            timings: !args.no_timing,
            lm,
        })
    }

    pub fn require_rank(&self) -> Result<usize, CliError> {
        self.rank.ok_or_else(|| CliError::usage("--rank is required (flag or config)"))
    }
}
