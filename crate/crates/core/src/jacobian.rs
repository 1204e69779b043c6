//! The structured Jacobian of the CP residual and products derived from it.
//!
//! With residual `F = X - Σ_r a_r ∘ b_r ∘ c_r` ordered first-index-fastest,
//! the Jacobian splits into per-component blocks
//!
//! ```text
//! J_a^r = -(c_r ⊗ b_r ⊗ I_I),  J_b^r = -(c_r ⊗ I_J ⊗ a_r),  J_c^r = -(I_K ⊗ b_r ⊗ a_r)
//! ```
//!
//! Every row of `J` touches exactly `3R` columns (one per mode and
//! component), so `J` has `3RQ` structural entries regardless of the factor
//! values. Columns are stored compressed, rows ascending within a column.

use std::io::Write;

use faer::Mat;

use crate::error::{Error, Result};
use crate::model::{split_packed, CpModel, Shape};

/// Upper bound on `rows * cols` for dense materialization.
pub const DENSE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    shape: Shape,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// `JᵀJ` and `JᵀF` in dense form.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub gram: Mat<f64>,
    pub grad: Vec<f64>,
}

pub fn build_jacobian(model: &CpModel) -> SparseJacobian {
    SparseJacobian::from_factors(model.shape(), model.a(), model.b(), model.c())
}

impl SparseJacobian {
    /// Jacobian at a packed parameter vector.
    pub(crate) fn from_packed(shape: Shape, x: &[f64]) -> Self {
        let (a, b, c) = split_packed(shape, x);
        Self::from_factors(shape, a, b, c)
    }

    fn from_factors(shape: Shape, a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let d = shape.dims;
        let (ni, nj, nk) = (d.i, d.j, d.k);
        let rank = shape.rank;
        let p = shape.num_params();
        let nnz = 3 * rank * d.len();

        let mut col_ptr = Vec::with_capacity(p + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);

        // A block: column (r, i1) touches rows with that i1.
        for r in 0..rank {
            let br = &b[r * nj..(r + 1) * nj];
            let cr = &c[r * nk..(r + 1) * nk];
            for i1 in 0..ni {
                for (i3, &cv) in cr.iter().enumerate() {
                    for (i2, &bv) in br.iter().enumerate() {
                        row_idx.push(i1 + ni * (i2 + nj * i3));
                        values.push(-(bv * cv));
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        // B block: column (r, i2).
        for r in 0..rank {
            let ar = &a[r * ni..(r + 1) * ni];
            let cr = &c[r * nk..(r + 1) * nk];
            for i2 in 0..nj {
                for (i3, &cv) in cr.iter().enumerate() {
                    for (i1, &av) in ar.iter().enumerate() {
                        row_idx.push(i1 + ni * (i2 + nj * i3));
                        values.push(-(av * cv));
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        // C block: column (r, i3).
        for r in 0..rank {
            let ar = &a[r * ni..(r + 1) * ni];
            let br = &b[r * nj..(r + 1) * nj];
            for i3 in 0..nk {
                for (i2, &bv) in br.iter().enumerate() {
                    for (i1, &av) in ar.iter().enumerate() {
                        row_idx.push(i1 + ni * (i2 + nj * i3));
                        values.push(-(av * bv));
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        debug_assert_eq!(row_idx.len(), nnz);
        Self { shape, col_ptr, row_idx, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `Q = IJK`.
    pub fn nrows(&self) -> usize {
        self.shape.dims.len()
    }

    /// `P = R (I + J + K)`.
    pub fn ncols(&self) -> usize {
        self.shape.num_params()
    }

    /// Number of structural entries; always `3RQ`.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row indices and values of column `col`.
    pub fn column(&self, col: usize) -> (&[usize], &[f64]) {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        (&self.row_idx[range.clone()], &self.values[range])
    }

    /// 0-based `(row, col, value)` triplets in storage order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols()).flat_map(move |col| {
            let (rows, vals) = self.column(col);
            rows.iter().zip(vals).map(move |(&r, &v)| (r, col, v))
        })
    }

    /// `out = J h`.
    pub fn mul_vec(&self, h: &[f64], out: &mut [f64]) {
        assert_eq!(h.len(), self.ncols());
        assert_eq!(out.len(), self.nrows());
        out.fill(0.0);
        for (col, &hc) in h.iter().enumerate() {
            if hc == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(col);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r] += v * hc;
            }
        }
    }

    /// `out = Jᵀ f`.
    pub fn tr_mul_vec(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.nrows());
        assert_eq!(out.len(), self.ncols());
        for (col, o) in out.iter_mut().enumerate() {
            let (rows, vals) = self.column(col);
            *o = rows.iter().zip(vals).map(|(&r, &v)| v * f[r]).sum();
        }
    }

    /// Largest diagonal entry of `JᵀJ`.
    pub fn gram_diagonal_max(&self) -> f64 {
        (0..self.ncols())
            .map(|col| self.column(col).1.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Writes `row,col,value` triplets with 1-based indices, in storage order.
    pub fn write_pattern_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{},{},{:.17e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

fn dense_guard(rows: usize, cols: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(n) if n <= DENSE_LIMIT => Ok(()),
        _ => Err(Error::Capacity { rows, cols, limit: DENSE_LIMIT }),
    }
}

/// Scatters the stored entries into a dense `Q x P` matrix.
pub fn densify(j: &SparseJacobian) -> Result<Mat<f64>> {
    dense_guard(j.nrows(), j.ncols())?;
    let mut out = Mat::<f64>::zeros(j.nrows(), j.ncols());
    for (r, c, v) in j.triplets() {
        out[(r, c)] = v;
    }
    Ok(out)
}

/// `JᵀJ` and `JᵀF`, accumulated from the rows of the sparse Jacobian.
pub fn normal_system(j: &SparseJacobian, f: &[f64]) -> Result<NormalSystem> {
    if f.len() != j.nrows() {
        return Err(Error::LengthMismatch { expected: j.nrows(), actual: f.len() });
    }
    let p = j.ncols();
    dense_guard(p, p)?;

    // Row-major view: each row holds exactly 3R entries.
    let per_row = 3 * j.shape.rank;
    let mut fill = vec![0usize; j.nrows()];
    let mut cols = vec![0usize; j.nnz()];
    let mut vals = vec![0.0; j.nnz()];
    for (r, c, v) in j.triplets() {
        let slot = r * per_row + fill[r];
        cols[slot] = c;
        vals[slot] = v;
        fill[r] += 1;
    }

    let mut gram = Mat::<f64>::zeros(p, p);
    for row in 0..j.nrows() {
        let rc = &cols[row * per_row..(row + 1) * per_row];
        let rv = &vals[row * per_row..(row + 1) * per_row];
        for (&c2, &v2) in rc.iter().zip(rv) {
            for (&c1, &v1) in rc.iter().zip(rv) {
                gram[(c1, c2)] += v1 * v2;
            }
        }
    }
    let mut grad = vec![0.0; p];
    j.tr_mul_vec(f, &mut grad);
    Ok(NormalSystem { gram, grad })
}

/// Number of singular values of `J` above `tol * σ_max`.
pub fn numerical_rank(j: &SparseJacobian, tol: f64) -> Result<usize> {
    let dense = densify(j)?;
    let sv = dense
        .singular_values()
        .map_err(|e| Error::InvalidArgument(format!("singular value decomposition failed: {e:?}")))?;
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}
