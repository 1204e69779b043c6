//! Dense third-order tensors.
//!
//! Entries are stored in a flat buffer with the first index varying fastest,
//! so entry `(i1, i2, i3)` (1-based) lives at flat position
//! `i1 + (i2 - 1) I + (i3 - 1) I J` (also 1-based). Everything inside the
//! crate works with 0-based offsets; the 1-based helpers exist for callers
//! that think in the usual mathematical convention.

use std::io::{Read, Write};
use std::ops::Sub;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Axis, Error, Result};

pub const TNS3_MAGIC: &[u8; 4] = b"TNS3";

/// 1-based flat index of entry `(i1, i2, i3)` in an `I x J x K` tensor.
///
/// The third extent only bounds `i3` from above, so it is not needed here;
/// `i3` must still be at least 1.
pub fn linear_index(i1: usize, i2: usize, i3: usize, i: usize, j: usize) -> Result<usize> {
    if i1 == 0 || i1 > i {
        return Err(Error::IndexOutOfRange { axis: Axis::First, index: i1, extent: i });
    }
    if i2 == 0 || i2 > j {
        return Err(Error::IndexOutOfRange { axis: Axis::Second, index: i2, extent: j });
    }
    if i3 == 0 {
        return Err(Error::IndexOutOfRange { axis: Axis::Third, index: i3, extent: usize::MAX });
    }
    Ok(i1 + (i2 - 1) * i + (i3 - 1) * i * j)
}

/// Extents `(I, J, K)` of a third-order tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(i: usize, j: usize, k: usize) -> Result<Self> {
        if i == 0 || j == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {i}x{j}x{k}"
            )));
        }
        Ok(Self { i, j, k })
    }

    /// Number of entries, `Q = IJK`.
    pub fn len(&self) -> usize {
        self.i * self.j * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }

    /// 0-based flat offset.
    #[inline]
    pub fn offset(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.i * (i2 + self.j * i3)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.i, self.j, self.k)
    }
}

impl std::str::FromStr for Dims {
    type Err = Error;

    /// Parses `IxJxK`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!("expected IxJxK, got {s:?}")));
        }
        let mut out = [0usize; 3];
        for (slot, p) in out.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad extent {p:?} in {s:?}")))?;
        }
        Dims::new(out[0], out[1], out[2])
    }
}

/// An `I x J x K` tensor of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.len()] }
    }

    /// Wraps a flat buffer laid out first-index-fastest.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch { expected: dims.len(), actual: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { dims, data })
    }

    /// Builds a tensor from a function of 0-based indices.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for i3 in 0..dims.k {
            for i2 in 0..dims.j {
                for i1 in 0..dims.i {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self::from_vec(dims, data)
    }

    /// Entries i.i.d. uniform on `[0, 1)`, drawn in storage order from a
    /// stream not used for initial factors.
    pub fn uniform(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let data = (0..dims.len()).map(|_| rng.random::<f64>()).collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Entry at 0-based indices. Panics when out of range.
    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        assert!(i1 < self.dims.i && i2 < self.dims.j && i3 < self.dims.k);
        self.data[self.dims.offset(i1, i2, i3)]
    }

    /// Entry at 1-based indices.
    pub fn entry(&self, i1: usize, i2: usize, i3: usize) -> Result<f64> {
        if i3 == 0 || i3 > self.dims.k {
            return Err(Error::IndexOutOfRange { axis: Axis::Third, index: i3, extent: self.dims.k });
        }
        let a = linear_index(i1, i2, i3, self.dims.i, self.dims.j)?;
        Ok(self.data[a - 1])
    }

    /// Overwrites the entry at 1-based indices. Rejects non-finite values.
    pub fn set_entry(&mut self, i1: usize, i2: usize, i3: usize, value: f64) -> Result<()> {
        if i3 == 0 || i3 > self.dims.k {
            return Err(Error::IndexOutOfRange { axis: Axis::Third, index: i3, extent: self.dims.k });
        }
        let a = linear_index(i1, i2, i3, self.dims.i, self.dims.j)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(a - 1));
        }
        self.data[a - 1] = value;
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                left: self.dims.to_string(),
                right: other.dims.to_string(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseTensor3 { dims: self.dims, data })
    }

    pub fn write_tns3<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = Vec::with_capacity(16);
        header.extend_from_slice(TNS3_MAGIC);
        for e in self.dims.as_array() {
            header.extend_from_slice(&extent_u32(e)?.to_le_bytes());
        }
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_tns3<R: Read>(r: R) -> Result<Self> {
        let mut reader = ByteReader::new(r, "TNS3");
        reader.expect_magic(TNS3_MAGIC)?;
        let i = reader.read_u32()? as usize;
        let j = reader.read_u32()? as usize;
        let k = reader.read_u32()? as usize;
        let dims = Dims::new(i, j, k).map_err(|e| reader.error(e.to_string()))?;
        let data = reader.read_f64s(dims.len())?;
        reader.expect_eof()?;
        Ok(Self { dims, data })
    }

    pub fn save_tns3(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_tns3(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_tns3(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_tns3(std::io::BufReader::new(f))
    }
}

impl Sub for &DenseTensor3 {
    type Output = Result<DenseTensor3>;

    fn sub(self, rhs: &DenseTensor3) -> Result<DenseTensor3> {
        DenseTensor3::sub(self, rhs)
    }
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(t: &DenseTensor3) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Elementwise `a - b`; the shapes must agree.
pub fn sub(a: &DenseTensor3, b: &DenseTensor3) -> Result<DenseTensor3> {
    a.sub(b)
}

pub(crate) fn extent_u32(e: usize) -> Result<u32> {
    u32::try_from(e).map_err(|_| Error::InvalidArgument(format!("extent {e} does not fit in u32")))
}

/// Little-endian reader that tracks its byte offset for diagnostics.
pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
    format: &'static str,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R, format: &'static str) -> Self {
        Self { inner, offset: 0, format }
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::Format { format: self.format, offset: self.offset, message: message.into() }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(self.error(format!(
                        "unexpected end of data ({} more bytes expected)",
                        buf.len() - read
                    )));
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf)?;
        if &buf != magic {
            self.offset = 0;
            return Err(self.error(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn read_u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub(crate) fn read_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            self.fill(&mut buf)?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                self.offset -= 8;
                return Err(self.error("non-finite value"));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut one = [0u8; 1];
        loop {
            match self.inner.read(&mut one) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.error("trailing bytes after payload")),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}
