use crate::damped::{DampedFactor, FactorGrams, LinearSolver};
use crate::error::{Error, Result};
use crate::jacobian::SparseJacobian;
use crate::model::{residual_packed, Shape};
use crate::tensor::DenseTensor3;

/// A nonlinear least-squares problem `min ½‖F(x)‖²`.
pub trait LeastSquares {
    type Lin: Linearization;

    fn num_params(&self) -> usize;

    fn num_residuals(&self) -> usize;

    /// Writes `F(x)` into `out`.
    fn residual(&self, x: &[f64], out: &mut [f64]);

    /// Jacobian of `F` at `x`, in whatever form the problem can factor.
    fn linearize(&self, x: &[f64]) -> Result<Self::Lin>;

    /// Norm against which a relative residual tolerance is measured.
    fn reference_norm(&self) -> Option<f64> {
        None
    }
}

/// The Jacobian `J` at one iterate.
pub trait Linearization {
    type Factor: DampedSolve;

    /// `out = J h`.
    fn apply(&self, h: &[f64], out: &mut [f64]);

    /// `out = Jᵀ f`.
    fn apply_transpose(&self, f: &[f64], out: &mut [f64]);

    /// Largest diagonal entry of `JᵀJ`.
    fn gram_diagonal_max(&self) -> f64;

    /// Factors `JᵀJ + μI`; fails with [`Error::Factorization`] when the
    /// matrix is numerically not positive definite.
    fn factor(&self, mu: f64) -> Result<Self::Factor>;
}

pub trait DampedSolve {
    /// Returns `h` with `(JᵀJ + μI) h = rhs`.
    fn solve(&self, rhs: &[f64]) -> Vec<f64>;
}

impl DampedSolve for DampedFactor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        DampedFactor::solve(self, rhs)
    }
}

/// CP fitting of an observed tensor with a fixed rank.
#[derive(Debug, Clone, Copy)]
pub struct CpProblem<'a> {
    observed: &'a DenseTensor3,
    shape: Shape,
    solver: LinearSolver,
}

impl<'a> CpProblem<'a> {
    pub fn new(observed: &'a DenseTensor3, rank: usize, solver: LinearSolver) -> Result<Self> {
        let shape = Shape::new(observed.dims(), rank)?;
        Ok(Self { observed, shape, solver })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn observed(&self) -> &DenseTensor3 {
        self.observed
    }
}

/// Sparse Jacobian plus the factor Grams used to factor `JᵀJ + μI`.
#[derive(Debug, Clone)]
pub struct CpLinearization {
    jacobian: SparseJacobian,
    grams: FactorGrams,
    solver: LinearSolver,
}

impl CpLinearization {
    pub fn jacobian(&self) -> &SparseJacobian {
        &self.jacobian
    }

    pub fn grams(&self) -> &FactorGrams {
        &self.grams
    }
}

impl LeastSquares for CpProblem<'_> {
    type Lin = CpLinearization;

    fn num_params(&self) -> usize {
        self.shape.num_params()
    }

    fn num_residuals(&self) -> usize {
        self.shape.dims.len()
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        residual_packed(self.shape, x, self.observed.as_slice(), out);
    }

    fn linearize(&self, x: &[f64]) -> Result<CpLinearization> {
        if x.len() != self.shape.num_params() {
            return Err(Error::LengthMismatch { expected: self.shape.num_params(), actual: x.len() });
        }
        Ok(CpLinearization {
            jacobian: SparseJacobian::from_packed(self.shape, x),
            grams: FactorGrams::new(self.shape, x)?,
            solver: self.solver,
        })
    }

    fn reference_norm(&self) -> Option<f64> {
        Some(self.observed.frobenius_norm())
    }
}

impl Linearization for CpLinearization {
    type Factor = DampedFactor;

    fn apply(&self, h: &[f64], out: &mut [f64]) {
        self.jacobian.mul_vec(h, out);
    }

    fn apply_transpose(&self, f: &[f64], out: &mut [f64]) {
        self.jacobian.tr_mul_vec(f, out);
    }

    fn gram_diagonal_max(&self) -> f64 {
        self.grams.gram_diagonal_max()
    }

    fn factor(&self, mu: f64) -> Result<DampedFactor> {
        self.grams.factor(mu, self.solver)
    }
}
