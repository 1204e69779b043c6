use std::time::Instant;

use super::gain::{gain_ratio, single_gain_ratio};
use super::problem::{DampedSolve, LeastSquares, Linearization};
use super::{IterationRecord, LmConfig, Method, TerminationReason};
use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Iterate-dependent solver state.
#[derive(Debug, Clone)]
pub struct LmState<L> {
    pub x: Vec<f64>,
    pub mu: f64,
    pub nu: f64,
    pub iter: usize,
    /// `F(x)`.
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    /// Jacobian at `x`.
    pub linearization: L,
    /// `Jᵀ F(x)`.
    pub gradient: Vec<f64>,
}

/// Levenberg-Marquardt driver over any [`LeastSquares`] problem.
///
/// Each accepted step rebuilds the Jacobian once at the new iterate;
/// rejected steps keep `x` and reuse the cached Jacobian with a larger `μ`.
pub struct LmSolver<P: LeastSquares> {
    problem: P,
    cfg: LmConfig,
    state: LmState<P::Lin>,
    trace: Vec<IterationRecord>,
    jacobian_builds: usize,
    residual_evals: usize,
    started: Instant,
}

impl<P: LeastSquares> LmSolver<P> {
    /// Evaluates `F` and `J` at `x0` and sets the initial damping.
    pub fn new(problem: P, x0: Vec<f64>, cfg: LmConfig) -> Result<Self> {
        cfg.validate()?;
        if x0.len() != problem.num_params() {
            return Err(Error::LengthMismatch { expected: problem.num_params(), actual: x0.len() });
        }
        let started = Instant::now();
        let mut residual = vec![0.0; problem.num_residuals()];
        problem.residual(&x0, &mut residual);
        let residual_norm = norm(&residual);
        if !residual_norm.is_finite() {
            return Err(Error::InvalidArgument("initial residual is not finite".into()));
        }
        let linearization = problem.linearize(&x0)?;
        let mut gradient = vec![0.0; x0.len()];
        linearization.apply_transpose(&residual, &mut gradient);

        let mu = cfg.mu0.unwrap_or_else(|| {
            let d = linearization.gram_diagonal_max();
            if d > 0.0 && d.is_finite() {
                1e-2 * d
            } else {
                1e-2
            }
        });
        let state = LmState {
            x: x0,
            mu,
            nu: cfg.nu0,
            iter: 0,
            residual,
            residual_norm,
            linearization,
            gradient,
        };
        Ok(Self {
            problem,
            cfg,
            state,
            trace: Vec::new(),
            jacobian_builds: 1,
            residual_evals: 1,
            started,
        })
    }

    pub fn state(&self) -> &LmState<P::Lin> {
        &self.state
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<IterationRecord>) {
        (self.state.x, self.trace)
    }

    /// Jacobian builds so far, including the initial one.
    pub fn jacobian_builds(&self) -> usize {
        self.jacobian_builds
    }

    /// Residual evaluations so far, including `F(x0)`.
    pub fn residual_evals(&self) -> usize {
        self.residual_evals
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Checks the tolerances that depend only on the current iterate.
    pub fn converged(&self) -> Option<TerminationReason> {
        let s = &self.state;
        if s.residual_norm <= self.cfg.tol {
            return Some(TerminationReason::ResidualTolerance);
        }
        if self.cfg.rel_tol > 0.0 {
            if let Some(r) = self.problem.reference_norm().filter(|r| *r > 0.0) {
                if s.residual_norm / r <= self.cfg.rel_tol {
                    return Some(TerminationReason::RelativeResidualTolerance);
                }
            }
        }
        if inf_norm(&s.gradient) <= self.cfg.grad_tol {
            return Some(TerminationReason::GradientTolerance);
        }
        None
    }

    fn step_is_small(&self, step_norm: f64) -> bool {
        let t = self.cfg.step_tol;
        step_norm <= t * (norm(&self.state.x) + t)
    }

    /// Factors `JᵀJ + μI`, multiplying `μ` by 10 on each failure.
    fn factor(&mut self) -> Result<<P::Lin as Linearization>::Factor> {
        for _ in 0..=self.cfg.max_mu_escalations {
            if !self.state.mu.is_finite() {
                break;
            }
            match self.state.linearization.factor(self.state.mu) {
                Ok(f) => return Ok(f),
                Err(Error::Factorization { .. }) => self.state.mu *= 10.0,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Divergence { iter: self.state.iter, mu: self.state.mu })
    }

    /// `‖r + J h‖`.
    fn linear_model_norm(&self, r: &[f64], h: &[f64]) -> f64 {
        let mut jh = vec![0.0; r.len()];
        self.state.linearization.apply(h, &mut jh);
        jh.iter().zip(r).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt()
    }

    fn evaluate(&mut self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut f = vec![0.0; self.problem.num_residuals()];
        self.problem.residual(x, &mut f);
        self.residual_evals += 1;
        let n = norm(&f);
        (f, n)
    }

    /// Accepts or rejects `trial` and updates the damping schedule.
    /// Returns `(accepted, jacobian_builds)`.
    fn update(&mut self, rho: Option<f64>, trial: Vec<f64>, f_trial: Vec<f64>, n_trial: f64) -> Result<(bool, usize)> {
        let accepted = matches!(rho, Some(r) if r > self.cfg.gamma) && n_trial < self.state.residual_norm;
        if accepted {
            let lin = self.problem.linearize(&trial)?;
            self.jacobian_builds += 1;
            let s = &mut self.state;
            lin.apply_transpose(&f_trial, &mut s.gradient);
            s.x = trial;
            s.residual = f_trial;
            s.residual_norm = n_trial;
            s.linearization = lin;
            s.mu *= 0.5;
            s.nu = self.cfg.nu0;
            Ok((true, 1))
        } else {
            let s = &mut self.state;
            s.mu *= s.nu;
            s.nu *= 2.0;
            Ok((false, 0))
        }
    }

    /// One classic LM iteration: a single damped solve per Jacobian.
    pub fn classic_iterate(&mut self) -> Result<IterationRecord> {
        let factor = self.factor()?;
        let (mu, nu) = (self.state.mu, self.state.nu);
        let rhs: Vec<f64> = self.state.gradient.iter().map(|g| -g).collect();
        let h = factor.solve(&rhs);
        drop(factor);
        let lin_h = self.linear_model_norm(&self.state.residual, &h);

        let trial: Vec<f64> = self.state.x.iter().zip(&h).map(|(x, d)| x + d).collect();
        let (f_trial, n_trial) = self.evaluate(&trial);
        let before = self.state.residual_norm;
        let rho = if n_trial.is_finite() && lin_h.is_finite() {
            Some(single_gain_ratio(before, n_trial, lin_h)?).filter(|r| r.is_finite())
        } else {
            None
        };
        let (accepted, builds) = self.update(rho, trial, f_trial, n_trial)?;
        Ok(self.record(mu, nu, rho, before, accepted, norm(&h), builds, 1))
    }

    /// One modified LM iteration: solves for `h` at `x`, then for `ĥ` at
    /// `y = x + h` with the same factorization, and tests `x + h + ĥ`.
    pub fn modified_iterate(&mut self) -> Result<IterationRecord> {
        let factor = self.factor()?;
        let (mu, nu) = (self.state.mu, self.state.nu);
        let rhs: Vec<f64> = self.state.gradient.iter().map(|g| -g).collect();
        let h = factor.solve(&rhs);
        let lin_h = self.linear_model_norm(&self.state.residual, &h);

        let y: Vec<f64> = self.state.x.iter().zip(&h).map(|(x, d)| x + d).collect();
        let (f_y, n_y) = self.evaluate(&y);

        let before = self.state.residual_norm;
        let (rho, step_norm, trial, f_trial, n_trial) = if n_y.is_finite() {
            let mut rhs2 = vec![0.0; h.len()];
            self.state.linearization.apply_transpose(&f_y, &mut rhs2);
            rhs2.iter_mut().for_each(|v| *v = -*v);
            let hhat = factor.solve(&rhs2);
            drop(factor);
            let lin_hhat = self.linear_model_norm(&f_y, &hhat);

            let step: Vec<f64> = h.iter().zip(&hhat).map(|(a, b)| a + b).collect();
            let trial: Vec<f64> = self.state.x.iter().zip(&step).map(|(x, d)| x + d).collect();
            let (f_trial, n_trial) = self.evaluate(&trial);
            let rho = if n_trial.is_finite() && lin_h.is_finite() && lin_hhat.is_finite() {
                Some(gain_ratio(before, n_trial, lin_h, n_y, lin_hhat)?).filter(|r| r.is_finite())
            } else {
                None
            };
            (rho, norm(&step), trial, f_trial, n_trial)
        } else {
            (None, norm(&h), y, f_y, n_y)
        };
        let (accepted, builds) = self.update(rho, trial, f_trial, n_trial)?;
        Ok(self.record(mu, nu, rho, before, accepted, step_norm, builds, 2))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        mu: f64,
        nu: f64,
        rho: Option<f64>,
        before: f64,
        accepted: bool,
        step_norm: f64,
        builds: usize,
        evals: usize,
    ) -> IterationRecord {
        self.state.iter += 1;
        let rec = IterationRecord {
            iter: self.state.iter,
            mu,
            nu,
            rho,
            residual_norm_before: before,
            residual_norm_after: self.state.residual_norm,
            accepted,
            step_norm,
            n_jacobian_builds: builds,
            n_residual_evals: evals,
            elapsed: self.elapsed(),
        };
        self.trace.push(rec);
        rec
    }

    /// One iteration of the configured method.
    pub fn iterate(&mut self) -> Result<IterationRecord> {
        match self.cfg.method {
            Method::Classic => self.classic_iterate(),
            Method::Modified => self.modified_iterate(),
        }
    }

    /// Iterates until a stopping rule fires.
    pub fn solve(&mut self) -> Result<TerminationReason> {
        loop {
            if let Some(reason) = self.converged() {
                return Ok(reason);
            }
            if self.state.iter >= self.cfg.max_iters {
                return Ok(TerminationReason::MaxIterations);
            }
            let rec = self.iterate()?;
            if self.step_is_small(rec.step_norm) {
                return Ok(TerminationReason::StepTolerance);
            }
        }
    }
}
