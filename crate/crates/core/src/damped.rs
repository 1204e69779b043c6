//! Damped normal equations `(JᵀJ + μI) h = rhs` for the CP Jacobian.
//!
//! `JᵀJ` never needs `J` itself: with `U_n` the factor of mode `n`,
//! `W_n = U_nᵀ U_n` and `Γ_n` the Hadamard product of the other two `W`s,
//!
//! - the diagonal block of mode `n` is `Γ_n ⊗ I`, i.e. entry
//!   `((n, r, i), (n, s, i)) = Γ_n[r, s]`;
//! - the block coupling modes `m ≠ n` has entry
//!   `((m, r, i), (n, s, j)) = W_o[r, s] U_m[i, s] U_n[j, r]`, `o` the third mode.
//!
//! [`LinearSolver::Dense`] assembles the whole `P x P` matrix and factors it.
//! [`LinearSolver::Schur`] eliminates the mode with the largest extent, whose
//! damped diagonal block `(Γ_e + μI) ⊗ I` inverts through an `R x R`
//! Cholesky factor, and factors the dense Schur complement on the remaining
//! two modes. For an image-shaped `100 x 100 x 3` tensor that halves the
//! order of the dense factorization.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Llt, Solve};
use faer::{Accum, Mat, MatMut, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{split_packed, Shape};

/// Limit on `P * P` for the dense path.
pub const DENSE_GRAM_LIMIT: usize = 64_000_000;

/// Solves `(gram + μI) h = -grad` by Cholesky factorization.
pub fn solve_damped(gram: MatRef<'_, f64>, grad: &[f64], mu: f64) -> Result<Vec<f64>> {
    let p = gram.nrows();
    if gram.ncols() != p {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", gram.nrows(), gram.ncols()),
            right: "square".into(),
        });
    }
    if grad.len() != p {
        return Err(Error::LengthMismatch { expected: p, actual: grad.len() });
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("damping must be positive, got {mu}")));
    }
    let mut damped = gram.to_owned();
    for d in 0..p {
        damped[(d, d)] += mu;
    }
    let llt = damped.llt(Side::Lower).map_err(|_| Error::Factorization { mu })?;
    let mut h: Vec<f64> = grad.iter().map(|g| -g).collect();
    llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut h, p, 1));
    Ok(h)
}

/// How the damped normal equations are factored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Full `P x P` Cholesky.
    Dense,
    /// Schur complement on the two smaller modes.
    #[default]
    Schur,
}

impl std::str::FromStr for LinearSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "schur" => Ok(Self::Schur),
            _ => Err(Error::InvalidArgument(format!("unknown linear solver {s:?}"))),
        }
    }
}

/// Factor matrices and their Gram matrices at one iterate.
#[derive(Debug, Clone)]
pub struct FactorGrams {
    shape: Shape,
    factors: [Mat<f64>; 3],
    grams: [Mat<f64>; 3],
}

impl FactorGrams {
    /// Grams at the packed parameter vector `x`.
    pub fn new(shape: Shape, x: &[f64]) -> Result<Self> {
        if x.len() != shape.num_params() {
            return Err(Error::LengthMismatch { expected: shape.num_params(), actual: x.len() });
        }
        let rank = shape.rank;
        let dims = shape.dims.as_array();
        let (a, b, c) = split_packed(shape, x);
        let factors = [a, b, c]
            .iter()
            .zip(dims)
            .map(|(buf, rows)| MatRef::from_column_major_slice(buf, rows, rank).to_owned())
            .collect::<Vec<_>>();
        let factors: [Mat<f64>; 3] = factors.try_into().expect("three modes");
        let grams = factors.each_ref().map(|u| u.transpose() * u);
        Ok(Self { shape, factors, grams })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `Γ_n`: Hadamard product of the Grams of the two other modes.
    pub fn gamma(&self, mode: usize) -> Mat<f64> {
        let (p, q) = other_modes(mode);
        let rank = self.shape.rank;
        Mat::from_fn(rank, rank, |r, s| self.grams[p][(r, s)] * self.grams[q][(r, s)])
    }

    /// Largest diagonal entry of `JᵀJ`.
    pub fn gram_diagonal_max(&self) -> f64 {
        (0..3)
            .flat_map(|n| {
                let g = self.gamma(n);
                (0..self.shape.rank).map(move |r| g[(r, r)])
            })
            .fold(0.0, f64::max)
    }

    /// Writes the `(m, n)` block of `JᵀJ` into `dst` (`R d_m x R d_n`).
    fn fill_block(&self, m: usize, n: usize, mut dst: MatMut<'_, f64>) {
        let rank = self.shape.rank;
        let dims = self.shape.dims.as_array();
        let (dm, dn) = (dims[m], dims[n]);
        if m == n {
            let g = self.gamma(m);
            dst.fill(0.0);
            for s in 0..rank {
                for r in 0..rank {
                    let v = g[(r, s)];
                    for i in 0..dm {
                        dst[(r * dm + i, s * dn + i)] = v;
                    }
                }
            }
        } else {
            let w = &self.grams[3 - m - n];
            let (um, un) = (&self.factors[m], &self.factors[n]);
            for s in 0..rank {
                for j in 0..dn {
                    let col = s * dn + j;
                    for r in 0..rank {
                        let scale = w[(r, s)] * un[(j, r)];
                        for i in 0..dm {
                            dst[(r * dm + i, col)] = scale * um[(i, s)];
                        }
                    }
                }
            }
        }
    }

    /// The full `P x P` matrix `JᵀJ`, from the closed-form blocks.
    pub fn dense_gram(&self) -> Result<Mat<f64>> {
        let p = self.shape.num_params();
        if p.checked_mul(p).is_none_or(|n| n > DENSE_GRAM_LIMIT) {
            return Err(Error::Capacity { rows: p, cols: p, limit: DENSE_GRAM_LIMIT });
        }
        let offs = self.shape.block_offsets();
        let sizes = self.shape.dims.as_array().map(|d| d * self.shape.rank);
        let mut gram = Mat::<f64>::zeros(p, p);
        for m in 0..3 {
            for n in 0..3 {
                self.fill_block(
                    m,
                    n,
                    gram.as_mut().submatrix_mut(offs[m], offs[n], sizes[m], sizes[n]),
                );
            }
        }
        Ok(gram)
    }

    /// `(JᵀJ)_{m,n} v` for `m ≠ n`, with `v` and the result stored as
    /// `d x R` matrices (one column per component).
    fn cross_apply(&self, m: usize, n: usize, v: MatRef<'_, f64>) -> Mat<f64> {
        let w = &self.grams[3 - m - n];
        let h = self.factors[n].transpose() * v;
        let rank = self.shape.rank;
        let weighted = Mat::from_fn(rank, rank, |r, s| w[(r, s)] * h[(r, s)]);
        &self.factors[m] * weighted.transpose()
    }

    /// Factors `JᵀJ + μI` with the requested strategy.
    pub fn factor(&self, mu: f64, solver: LinearSolver) -> Result<DampedFactor> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("damping must be positive, got {mu}")));
        }
        match solver {
            LinearSolver::Dense => {
                let mut gram = self.dense_gram()?;
                for d in 0..gram.nrows() {
                    gram[(d, d)] += mu;
                }
                let llt = gram.llt(Side::Lower).map_err(|_| Error::Factorization { mu })?;
                Ok(DampedFactor { mu, inner: Inner::Dense(llt) })
            }
            LinearSolver::Schur => Ok(DampedFactor { mu, inner: Inner::Schur(self.schur(mu)?) }),
        }
    }

    fn schur(&self, mu: f64) -> Result<SchurFactor> {
        let rank = self.shape.rank;
        let dims = self.shape.dims.as_array();
        // Largest extent is eliminated; ties go to the lowest mode.
        let elim = (0..3).fold(0, |best, n| if dims[n] > dims[best] { n } else { best });
        let kept = other_modes(elim);
        let kept = [kept.0, kept.1];

        let mut g = self.gamma(elim);
        for r in 0..rank {
            g[(r, r)] += mu;
        }
        let g_llt = g.llt(Side::Lower).map_err(|_| Error::Factorization { mu })?;
        let g_inv = g_llt.solve(Mat::<f64>::identity(rank, rank));

        let sizes = kept.map(|m| rank * dims[m]);
        let nk = sizes[0] + sizes[1];
        let koff = [0, sizes[0]];

        // Row (m, r, i) of `y` is U_m[i, :] ∘ W_o[r, :], o the mode other than m and e.
        let mut y = Mat::<f64>::zeros(nk, rank);
        for (slot, &m) in kept.iter().enumerate() {
            let w = &self.grams[3 - m - elim];
            let u = &self.factors[m];
            for r in 0..rank {
                for i in 0..dims[m] {
                    let row = koff[slot] + r * dims[m] + i;
                    for s in 0..rank {
                        y[(row, s)] = u[(i, s)] * w[(r, s)];
                    }
                }
            }
        }
        let z = &y * &g_inv;
        let mut s = Mat::<f64>::zeros(nk, nk);
        matmul(s.as_mut(), Accum::Replace, z.as_ref(), y.transpose(), 1.0, faer::get_global_parallelism());
        drop(z);
        drop(y);

        // S = M_KK + μI - E ∘ (Y G Yᵀ), E = W_e expanded over the component index.
        let e = &self.grams[elim];
        for (cs, &n) in kept.iter().enumerate() {
            for t in 0..rank {
                for j in 0..dims[n] {
                    let col = koff[cs] + t * dims[n] + j;
                    for (rs, &m) in kept.iter().enumerate() {
                        for r in 0..rank {
                            let ert = e[(r, t)];
                            let base = koff[rs] + r * dims[m];
                            for i in 0..dims[m] {
                                s[(base + i, col)] *= -ert;
                            }
                        }
                    }
                }
            }
        }
        let mut block = Mat::<f64>::zeros(0, 0);
        for (rs, &m) in kept.iter().enumerate() {
            for (cs, &n) in kept.iter().enumerate() {
                block.resize_with(sizes[rs], sizes[cs], |_, _| 0.0);
                self.fill_block(m, n, block.as_mut());
                let mut dst = s.as_mut().submatrix_mut(koff[rs], koff[cs], sizes[rs], sizes[cs]);
                dst += &block;
            }
        }
        for d in 0..nk {
            s[(d, d)] += mu;
        }
        let s_llt = s.llt(Side::Lower).map_err(|_| Error::Factorization { mu })?;
        Ok(SchurFactor { grams: self.clone(), elim, kept, g_llt, s_llt })
    }
}

fn other_modes(mode: usize) -> (usize, usize) {
    match mode {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// A factorization of `JᵀJ + μI`, reusable for any number of right-hand sides.
#[derive(Debug)]
pub struct DampedFactor {
    mu: f64,
    inner: Inner,
}

#[derive(Debug)]
enum Inner {
    Dense(Llt<f64>),
    Schur(SchurFactor),
}

#[derive(Debug)]
struct SchurFactor {
    grams: FactorGrams,
    elim: usize,
    kept: [usize; 2],
    g_llt: Llt<f64>,
    s_llt: Llt<f64>,
}

impl DampedFactor {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Returns `h` with `(JᵀJ + μI) h = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.inner {
            Inner::Dense(llt) => {
                let mut h = rhs.to_vec();
                let n = h.len();
                llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut h, n, 1));
                h
            }
            Inner::Schur(f) => f.solve(rhs),
        }
    }
}

impl SchurFactor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let shape = self.grams.shape;
        let rank = shape.rank;
        let dims = shape.dims.as_array();
        let offs = shape.block_offsets();
        assert_eq!(rhs.len(), shape.num_params());
        let block = |v: &[f64], n: usize| -> Mat<f64> {
            MatRef::from_column_major_slice(&v[offs[n]..offs[n] + rank * dims[n]], dims[n], rank)
                .to_owned()
        };
        let e = self.elim;

        // t_e = b_e (Γ_e + μI)⁻¹, acting on the component index.
        let mut t = block(rhs, e);
        self.g_llt.rsolve_in_place(t.as_mut());

        let mut reduced = Vec::with_capacity(rhs.len() - rank * dims[e]);
        for &m in &self.kept {
            let corr = self.grams.cross_apply(m, e, t.as_ref());
            let bm = block(rhs, m);
            for r in 0..rank {
                for i in 0..dims[m] {
                    reduced.push(bm[(i, r)] - corr[(i, r)]);
                }
            }
        }
        let nk = reduced.len();
        self.s_llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut reduced, nk, 1));

        let mut out = vec![0.0; rhs.len()];
        let mut ue = block(rhs, e);
        let mut pos = 0;
        for &n in &self.kept {
            let len = rank * dims[n];
            let hn = &reduced[pos..pos + len];
            out[offs[n]..offs[n] + len].copy_from_slice(hn);
            let hn = MatRef::from_column_major_slice(hn, dims[n], rank);
            ue -= self.grams.cross_apply(e, n, hn);
            pos += len;
        }
        self.g_llt.rsolve_in_place(ue.as_mut());
        for r in 0..rank {
            for i in 0..dims[e] {
                out[offs[e] + r * dims[e] + i] = ue[(i, r)];
            }
        }
        out
    }
}
