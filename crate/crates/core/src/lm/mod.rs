//! Levenberg-Marquardt solvers for CP fitting.

mod gain;
mod problem;
mod solver;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gain::{gain_ratio, single_gain_ratio, DENOM_FLOOR, REJECT};
pub use problem::{CpLinearization, CpProblem, DampedSolve, LeastSquares, Linearization};
pub use solver::{LmSolver, LmState};

use crate::damped::LinearSolver;
use crate::error::{Error, Result};
use crate::model::CpModel;
use crate::tensor::DenseTensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Method {
    /// One damped solve per Jacobian.
    #[serde(rename = "lm", alias = "classic-lm")]
    Classic,
    /// Two damped solves per Jacobian sharing one factorization.
    #[default]
    #[serde(rename = "mlm", alias = "modified-lm")]
    Modified,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Classic => "lm",
            Method::Modified => "mlm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" | "classic-lm" => Ok(Method::Classic),
            "mlm" | "modified-lm" => Ok(Method::Modified),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}, expected lm or mlm"))),
        }
    }
}

/// Solver settings. `mu0 = None` picks `1e-2 · max diag(J₀ᵀJ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_iters: usize,
    /// Absolute tolerance on `‖F(x)‖₂`.
    pub tol: f64,
    /// Tolerance on `‖F(x)‖₂ / ‖X‖_F`; 0 disables it.
    pub rel_tol: f64,
    /// Tolerance on `‖JᵀF‖_∞`.
    pub grad_tol: f64,
    pub mu0: Option<f64>,
    pub nu0: f64,
    /// Steps with gain ratio above this are accepted.
    pub gamma: f64,
    /// Stop when `‖s‖ ≤ step_tol · (‖x‖ + step_tol)`.
    pub step_tol: f64,
    pub seed: u64,
    pub method: Method,
    pub linear_solver: LinearSolver,
    pub max_mu_escalations: u32,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 0.0,
            rel_tol: 0.0,
            grad_tol: 1e-9,
            mu0: None,
            nu0: 2.0,
            gamma: 0.0,
            step_tol: 1e-12,
            seed: 0,
            method: Method::Modified,
            linear_solver: LinearSolver::Schur,
            max_mu_escalations: 32,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        for (name, v) in [
            ("tol", self.tol),
            ("rel_tol", self.rel_tol),
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if let Some(mu) = self.mu0 {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::InvalidArgument(format!("mu0 must be positive, got {mu}")));
            }
        }
        if !(self.nu0.is_finite() && self.nu0 > 1.0) {
            return Err(Error::InvalidArgument(format!("nu0 must exceed 1, got {}", self.nu0)));
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    MaxIterations,
    ResidualTolerance,
    RelativeResidualTolerance,
    GradientTolerance,
    StepTolerance,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::MaxIterations => "max-iterations",
            TerminationReason::ResidualTolerance => "residual-tolerance",
            TerminationReason::RelativeResidualTolerance => "relative-residual-tolerance",
            TerminationReason::GradientTolerance => "gradient-tolerance",
            TerminationReason::StepTolerance => "step-tolerance",
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Telemetry for one iteration. `mu` and `nu` are the values the step was
/// computed with; `rho` is `None` when no ratio could be formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub mu: f64,
    pub nu: f64,
    pub rho: Option<f64>,
    pub residual_norm_before: f64,
    pub residual_norm_after: f64,
    pub accepted: bool,
    pub step_norm: f64,
    pub n_jacobian_builds: usize,
    pub n_residual_evals: usize,
    pub elapsed: f64,
}

pub const TRACE_HEADER: &str = "iter,mu,nu,rho,res_before,res_after,accepted,step_norm,jac_builds,res_evals,elapsed_s";

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the trace as CSV. With `timings = false` the `elapsed_s` column
/// is left empty so that reruns produce identical bytes.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[IterationRecord], timings: bool) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        let rho = match r.rho {
            Some(v) if v.is_finite() => sci(v),
            _ => String::new(),
        };
        let elapsed = if timings { sci(r.elapsed) } else { String::new() };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            sci(r.mu),
            sci(r.nu),
            rho,
            sci(r.residual_norm_before),
            sci(r.residual_norm_after),
            r.accepted,
            sci(r.step_norm),
            r.n_jacobian_builds,
            r.n_residual_evals,
            elapsed
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub iters: usize,
    pub final_residual: f64,
    pub reason: TerminationReason,
    pub total_seconds: f64,
    /// Includes the build at the starting point.
    pub jacobian_builds: usize,
    /// Includes the evaluation at the starting point.
    pub residual_evals: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: CpModel,
    pub trace: Vec<IterationRecord>,
    pub reason: TerminationReason,
    pub summary: RunSummary,
}

/// Fits a rank-`rank` CP model starting from uniform factors drawn with `cfg.seed`.
pub fn run(observed: &DenseTensor3, rank: usize, cfg: &LmConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let init = CpModel::uniform(observed.dims(), rank, cfg.seed)?;
    run_from(observed, &init, cfg)
}

/// Fits a CP model starting from `init`.
pub fn run_from(observed: &DenseTensor3, init: &CpModel, cfg: &LmConfig) -> Result<RunOutput> {
    if init.dims() != observed.dims() {
        return Err(Error::ShapeMismatch { left: init.dims().to_string(), right: observed.dims().to_string() });
    }
    let problem = CpProblem::new(observed, init.rank(), cfg.linear_solver)?;
    let shape = problem.shape();
    let mut solver = LmSolver::new(problem, init.pack().into_vec(), cfg.clone())?;
    let reason = solver.solve()?;
    let summary = RunSummary {
        method: cfg.method,
        iters: solver.state().iter,
        final_residual: solver.state().residual_norm,
        reason,
        total_seconds: solver.elapsed(),
        jacobian_builds: solver.jacobian_builds(),
        residual_evals: solver.residual_evals(),
    };
    let (x, trace) = solver.into_parts();
    let model = crate::model::ParamVector::new(shape, x)?.unpack()?;
    Ok(RunOutput { model, trace, reason, summary })
}
