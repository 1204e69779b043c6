//! Rank-`R` CP decomposition of third-order tensors by Levenberg-Marquardt
//! iterations on the stacked factor vector, including a modified variant
//! that reuses each Jacobian for two damped normal-equation solves.

pub mod damped;
pub mod error;
pub mod image;
pub mod jacobian;
pub mod lm;
pub mod model;
pub mod tensor;

pub use damped::{solve_damped, DampedFactor, FactorGrams, LinearSolver};
pub use error::{Error, Result};
pub use lm::{run, run_from, write_trace_csv, IterationRecord, LmConfig, LmSolver, Method, RunOutput, RunSummary, TerminationReason};
pub use image::{image_to_tensor, psnr, psnr_capped, tensor_to_image, RgbImage, Scale};
pub use jacobian::{build_jacobian, densify, normal_system, numerical_rank, NormalSystem, SparseJacobian};
pub use model::{compression_percent, cp_reconstruct, synthetic_low_rank, pack, residual, unpack, Compression, CpModel, ParamVector, Shape};
pub use tensor::{frobenius_norm, linear_index, sub, DenseTensor3, Dims};

/// Sets the number of threads used by dense linear algebra. `1` runs
/// sequentially; results are reproducible for a fixed thread count.
pub fn set_threads(n: usize) {
    let par = if n <= 1 { faer::Par::Seq } else { faer::Par::rayon(n) };
    faer::set_global_parallelism(par);
}
