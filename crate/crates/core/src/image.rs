//! RGB images as `height × width × 3` tensors.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor3, Dims};

/// PSNR written for identical images, whose true PSNR is infinite.
pub const PSNR_CAP: f64 = 99.0;

/// 8-bit RGB image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("image extents must be positive, got {width}x{height}")));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::InvalidArgument("image too large".into()))?;
        if pixels.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for row in 0..height {
            for col in 0..width {
                pixels.extend_from_slice(&f(row, col));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let o = 3 * (row * self.width + col);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }
}

/// Mapping between 8-bit samples and tensor entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// `v ↦ v / 255`.
    #[default]
    Unit,
    /// `v ↦ v`.
    Byte,
}

impl Scale {
    fn max(self) -> f64 {
        match self {
            Scale::Unit => 1.0,
            Scale::Byte => 255.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Unit => "unit",
            Scale::Byte => "byte",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Scale::Unit),
            "byte" => Ok(Scale::Byte),
            _ => Err(Error::InvalidArgument(format!("unknown scale {s:?}, expected unit or byte"))),
        }
    }
}

/// Tensor with mode 1 = row, mode 2 = column, mode 3 = channel.
pub fn image_to_tensor(img: &RgbImage, scale: Scale) -> DenseTensor3 {
    let dims = Dims::new(img.height, img.width, 3).expect("image extents are positive");
    let factor = scale.max() / 255.0;
    DenseTensor3::from_fn(dims, |row, col, ch| f64::from(img.pixel(row, col)[ch]) * factor)
        .expect("image samples are finite")
}

/// Clamps each entry to the scale's range and rounds half away from zero.
pub fn tensor_to_image(t: &DenseTensor3, scale: Scale) -> Result<RgbImage> {
    let [h, w, k] = t.dims().as_array();
    if k != 3 {
        return Err(Error::InvalidArgument(format!("image output needs 3 channels, tensor is {}", t.dims())));
    }
    let max = scale.max();
    RgbImage::from_fn(w, h, |row, col| {
        std::array::from_fn(|ch| {
            let v = t.get(row, col, ch).clamp(0.0, max);
            (v * 255.0 / max).round() as u8
        })
    })
}

/// Peak signal-to-noise ratio in dB over all samples; `+∞` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", a.width, a.height),
            right: format!("{}x{}", b.width, b.height),
        });
    }
    let sse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.pixels.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// [`psnr`] with the infinite case replaced by [`PSNR_CAP`].
pub fn psnr_capped(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    psnr(a, b).map(|v| v.min(PSNR_CAP))
}

/// A decoded image plus whether an alpha channel was discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub image: RgbImage,
    pub alpha_stripped: bool,
}

fn png_error(e: impl fmt::Display) -> Error {
    Error::Format { format: "PNG", offset: 0, message: e.to_string() }
}

/// Decodes an 8-bit RGB or RGBA PNG. Palette images are expanded and 16-bit
/// samples are reduced to 8 bits.
pub fn read_png<R: BufRead + Seek>(r: R) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_error)?;
    let size = reader.output_buffer_size().ok_or_else(|| png_error("image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(png_error(format!("unsupported color type {other:?}, expected RGB or RGBA"))),
    };
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            pixels.extend_from_slice(&px[..3]);
        }
    }
    Ok(Decoded { image: RgbImage::new(w, h, pixels)?, alpha_stripped: channels == 4 })
}

pub fn write_png<W: Write>(w: W, img: &RgbImage) -> Result<()> {
    let (width, height) = (dim_u32(img.width)?, dim_u32(img.height)?);
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_error)?;
    writer.write_image_data(&img.pixels).map_err(png_error)?;
    writer.finish().map_err(png_error)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("image extent {v} exceeds u32")))
}

/// Writes binary PPM (`P6`, maxval 255).
pub fn write_ppm<W: Write>(mut w: W, img: &RgbImage) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.pixels)?;
    Ok(())
}

/// Reads binary PPM (`P6`) with maxval 255. Header comments are skipped.
pub fn read_ppm<R: Read>(r: R) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    BufReader::new(r).read_to_end(&mut bytes)?;
    let err = |offset: usize, message: &str| Error::Format { format: "PPM", offset: offset as u64, message: message.into() };
    if !bytes.starts_with(b"P6") {
        return Err(err(0, "missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(start, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| err(start, "header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(err(pos, "zero image extent"));
    }
    let n = w.checked_mul(h).and_then(|v| v.checked_mul(3)).ok_or_else(|| err(pos, "image too large"))?;
    let data = &bytes[pos..];
    if data.len() < n {
        return Err(err(bytes.len(), "truncated pixel data"));
    }
    if data.len() > n {
        return Err(err(pos + n, "trailing bytes after pixel data"));
    }
    RgbImage::new(w, h, data.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    /// Guesses the format from a `.png`, `.ppm` or `.pnm` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(ImageFormat::Png),
            "ppm" | "pnm" => Some(ImageFormat::Ppm),
            _ => None,
        }
    }
}

fn format_of(path: &Path) -> Result<ImageFormat> {
    ImageFormat::from_path(path)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot infer image format of {}", path.display())))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Decoded> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    match format_of(path)? {
        ImageFormat::Png => read_png(file),
        ImageFormat::Ppm => Ok(Decoded { image: read_ppm(file)?, alpha_stripped: false }),
    }
}

pub fn save_image(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let format = format_of(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        ImageFormat::Png => write_png(&mut w, img)?,
        ImageFormat::Ppm => write_ppm(&mut w, img)?,
    }
    w.flush()?;
    Ok(())
}
