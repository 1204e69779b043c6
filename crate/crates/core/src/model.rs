//! Factor matrices of a rank-`R` CP model and their packed parameter vector.
//!
//! The packed layout is `[vec(A); vec(B); vec(C)]` with each `vec` stacking
//! columns, so column `r` of `A` occupies `x[r I .. (r + 1) I]`, column `r`
//! of `B` occupies `x[R I + r J .. R I + (r + 1) J]` and column `r` of `C`
//! occupies `x[R (I + J) + r K .. R (I + J) + (r + 1) K]` (0-based).

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{extent_u32, ByteReader, DenseTensor3, Dims};

pub const CPD3_MAGIC: &[u8; 4] = b"CPD3";

/// Tensor extents plus rank: everything needed to interpret a packed vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub dims: Dims,
    pub rank: usize,
}

impl Shape {
    pub fn new(dims: Dims, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        Ok(Self { dims, rank })
    }

    /// `P = R (I + J + K)`.
    pub fn num_params(&self) -> usize {
        self.rank * (self.dims.i + self.dims.j + self.dims.k)
    }

    /// Offsets of the A, B and C blocks inside the packed vector.
    pub fn block_offsets(&self) -> [usize; 3] {
        let r = self.rank;
        [0, r * self.dims.i, r * (self.dims.i + self.dims.j)]
    }
}

/// Factor matrices `A (I x R)`, `B (J x R)`, `C (K x R)`, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    shape: Shape,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl CpModel {
    /// Builds a model from column-major factor buffers.
    pub fn new(dims: Dims, rank: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims, rank)?;
        for (buf, rows) in [(&a, dims.i), (&b, dims.j), (&c, dims.k)] {
            if buf.len() != rows * rank {
                return Err(Error::LengthMismatch { expected: rows * rank, actual: buf.len() });
            }
        }
        let model = Self { shape, a, b, c };
        let mut offset = 0;
        for f in model.factors() {
            if let Some(p) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(offset + p));
            }
            offset += f.len();
        }
        Ok(model)
    }

    pub fn zeros(dims: Dims, rank: usize) -> Result<Self> {
        Self::new(
            dims,
            rank,
            vec![0.0; dims.i * rank],
            vec![0.0; dims.j * rank],
            vec![0.0; dims.k * rank],
        )
    }

    /// Factors with i.i.d. uniform `[0, 1)` entries.
    ///
    /// Each factor matrix draws from its own ChaCha stream of the same seed,
    /// so the draws for `A` do not depend on the extents of `B` or `C`.
    pub fn uniform(dims: Dims, rank: usize, seed: u64) -> Result<Self> {
        Self::uniform_streams(dims, rank, seed, 0)
    }

    fn uniform_streams(dims: Dims, rank: usize, seed: u64, first: u64) -> Result<Self> {
        let draw = |stream: u64, len: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(first + stream);
            (0..len).map(|_| rng.random::<f64>()).collect::<Vec<_>>()
        };
        let a = draw(0, dims.i * rank);
        let b = draw(1, dims.j * rank);
        let c = draw(2, dims.k * rank);
        Self::new(dims, rank, a, b, c)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> Dims {
        self.shape.dims
    }

    pub fn rank(&self) -> usize {
        self.shape.rank
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn factors(&self) -> [&[f64]; 3] {
        [&self.a, &self.b, &self.c]
    }

    /// Column `r` (0-based) of factor `mode` (0 = A, 1 = B, 2 = C).
    pub fn column(&self, mode: usize, r: usize) -> &[f64] {
        let rows = self.shape.dims.as_array()[mode];
        &self.factors()[mode][r * rows..(r + 1) * rows]
    }

    pub fn pack(&self) -> ParamVector {
        pack(self)
    }

    pub fn reconstruct(&self) -> DenseTensor3 {
        let mut out = vec![0.0; self.dims().len()];
        reconstruct_into(self.shape, &self.a, &self.b, &self.c, &mut out);
        DenseTensor3::from_vec(self.dims(), out).expect("finite factors give finite entries")
    }

    pub fn write_cpd3<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims();
        let mut buf = Vec::with_capacity(20 + 8 * self.shape.num_params());
        buf.extend_from_slice(CPD3_MAGIC);
        for e in [d.i, d.j, d.k, self.rank()] {
            buf.extend_from_slice(&extent_u32(e)?.to_le_bytes());
        }
        for f in self.factors() {
            for v in f {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cpd3<R: Read>(r: R) -> Result<Self> {
        let mut reader = ByteReader::new(r, "CPD3");
        reader.expect_magic(CPD3_MAGIC)?;
        let i = reader.read_u32()? as usize;
        let j = reader.read_u32()? as usize;
        let k = reader.read_u32()? as usize;
        let rank = reader.read_u32()? as usize;
        let dims = Dims::new(i, j, k).map_err(|e| reader.error(e.to_string()))?;
        Shape::new(dims, rank).map_err(|e| reader.error(e.to_string()))?;
        let a = reader.read_f64s(i * rank)?;
        let b = reader.read_f64s(j * rank)?;
        let c = reader.read_f64s(k * rank)?;
        reader.expect_eof()?;
        Self::new(dims, rank, a, b, c)
    }

    pub fn save_cpd3(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_cpd3(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_cpd3(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_cpd3(std::io::BufReader::new(f))
    }
}

/// The stacked parameter vector `x` of length `R (I + J + K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    shape: Shape,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(Error::LengthMismatch { expected: shape.num_params(), actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn unpack(&self) -> Result<CpModel> {
        unpack(self)
    }
}

pub fn pack(model: &CpModel) -> ParamVector {
    let mut data = Vec::with_capacity(model.shape.num_params());
    data.extend_from_slice(&model.a);
    data.extend_from_slice(&model.b);
    data.extend_from_slice(&model.c);
    ParamVector { shape: model.shape, data }
}

pub fn unpack(x: &ParamVector) -> Result<CpModel> {
    let shape = x.shape;
    if x.data.len() != shape.num_params() {
        return Err(Error::LengthMismatch { expected: shape.num_params(), actual: x.data.len() });
    }
    let (a, b, c) = split_packed(shape, &x.data);
    CpModel::new(shape.dims, shape.rank, a.to_vec(), b.to_vec(), c.to_vec())
}

/// Splits a packed vector into its A, B and C blocks.
pub(crate) fn split_packed(shape: Shape, x: &[f64]) -> (&[f64], &[f64], &[f64]) {
    let [_, ob, oc] = shape.block_offsets();
    let (a, rest) = x.split_at(ob);
    let (b, c) = rest.split_at(oc - ob);
    (a, b, c)
}

/// `out[α(i1,i2,i3)] = Σ_r a_r(i1) b_r(i2) c_r(i3)`, summing over `r` in order.
pub(crate) fn reconstruct_into(shape: Shape, a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]) {
    let Dims { i, j, k } = shape.dims;
    let rank = shape.rank;
    let mut w = vec![0.0; rank];
    for i3 in 0..k {
        for i2 in 0..j {
            for (r, wr) in w.iter_mut().enumerate() {
                *wr = b[r * j + i2] * c[r * k + i3];
            }
            let row = &mut out[i * (i2 + j * i3)..][..i];
            for (i1, o) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for (r, wr) in w.iter().enumerate() {
                    s += a[r * i + i1] * wr;
                }
                *o = s;
            }
        }
    }
}

/// Residual `F(x) = observed - model` written into `out`, for a packed `x`.
pub(crate) fn residual_packed(shape: Shape, x: &[f64], observed: &[f64], out: &mut [f64]) {
    let (a, b, c) = split_packed(shape, x);
    reconstruct_into(shape, a, b, c, out);
    for (o, v) in out.iter_mut().zip(observed) {
        *o = v - *o;
    }
}

/// Rebuilds the full tensor `Σ_r a_r ∘ b_r ∘ c_r`.
pub fn cp_reconstruct(model: &CpModel, dims: Dims) -> Result<DenseTensor3> {
    if model.dims() != dims {
        return Err(Error::ShapeMismatch { left: model.dims().to_string(), right: dims.to_string() });
    }
    Ok(model.reconstruct())
}

/// Residual vector `F(x)` of length `IJK`, data minus model, in α order.
///
/// Half its squared norm is the CP least-squares objective.
pub fn residual(x: &ParamVector, observed: &DenseTensor3) -> Result<Vec<f64>> {
    if x.shape.dims != observed.dims() {
        return Err(Error::ShapeMismatch {
            left: x.shape.dims.to_string(),
            right: observed.dims().to_string(),
        });
    }
    let mut out = vec![0.0; observed.dims().len()];
    residual_packed(x.shape, &x.data, observed.as_slice(), &mut out);
    Ok(out)
}

/// Exactly rank-`rank` test tensor built from uniform `[0, 1)` factors.
///
/// The factors come from streams disjoint from [`CpModel::uniform`], so a
/// starting point drawn with the same seed is unrelated to the data.
pub fn synthetic_low_rank(dims: Dims, rank: usize, seed: u64) -> Result<DenseTensor3> {
    Ok(CpModel::uniform_streams(dims, rank, seed, 4)?.reconstruct())
}

/// Storage saved by the factored form relative to the dense tensor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Compression {
    /// `100 (1 - R (I + J + K) / (IJK))`, or 0 when the factors are not smaller.
    pub percent: f64,
    /// `percent` rounded to the nearest integer, halves away from zero.
    pub rounded: u32,
    /// Set when `R (I + J + K) >= IJK`; the factored form saves nothing.
    pub degenerate: bool,
}

pub fn compression_percent(i: usize, j: usize, k: usize, rank: usize) -> Compression {
    let params = (rank * (i + j + k)) as f64;
    let entries = (i * j * k) as f64;
    if params >= entries {
        return Compression { percent: 0.0, rounded: 0, degenerate: true };
    }
    let percent = 100.0 * (1.0 - params / entries);
    Compression { percent, rounded: percent.round() as u32, degenerate: false }
}
