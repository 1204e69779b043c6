use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cplm_core::image::{self, ImageFormat, RgbImage};
use cplm_core::{synthetic_low_rank, CpModel, DenseTensor3, Dims, Scale};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::args::InputArgs;
use crate::error::CliError;

/// A loaded observation and where it came from.
pub struct Observed {
    pub tensor: DenseTensor3,
    pub source: Source,
    /// Set when the input was an image.
    pub image: Option<RgbImage>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    Tensor { path: PathBuf },
    Image { path: PathBuf, scale: Scale },
    Synthetic { dims: String, true_rank: Option<usize>, data_seed: u64 },
}

pub fn warn(message: impl std::fmt::Display) {
    eprintln!("warning: {message}");
}

pub fn synthetic(dims: Dims, true_rank: Option<usize>, seed: u64) -> Result<DenseTensor3, CliError> {
    match true_rank {
        Some(r) => synthetic_low_rank(dims, r, seed).map_err(|e| CliError::usage(e.to_string())),
        None => Ok(DenseTensor3::uniform(dims, seed)),
    }
}

pub fn load_observed(args: &InputArgs, scale: Scale) -> Result<Observed, CliError> {
    if let Some(dims) = args.synthetic {
        let tensor = synthetic(dims, args.true_rank, args.data_seed)?;
        let source = Source::Synthetic { dims: dims.to_string(), true_rank: args.true_rank, data_seed: args.data_seed };
        return Ok(Observed { tensor, source, image: None });
    }
    let path = args.input.as_ref().expect("clap enforces one source");
    if ImageFormat::from_path(path).is_some() {
        let img = load_image(path)?;
        let tensor = image::image_to_tensor(&img, scale);
        Ok(Observed { tensor, source: Source::Image { path: path.clone(), scale }, image: Some(img) })
    } else {
        let tensor = DenseTensor3::load_tns3(path).map_err(|e| read_error(path, e))?;
        Ok(Observed { tensor, source: Source::Tensor { path: path.clone() }, image: None })
    }
}

pub fn read_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

pub fn load_image(path: &Path) -> Result<RgbImage, CliError> {
    let decoded = image::load_image(path).map_err(|e| read_error(path, e))?;
    if decoded.alpha_stripped {
        warn(format!("{}: alpha channel discarded", path.display()));
    }
    Ok(decoded.image)
}

pub fn load_model(path: &Path) -> Result<CpModel, CliError> {
    CpModel::load_cpd3(path).map_err(|e| read_error(path, e))
}

/// Writes through a temporary file in the target directory, then renames it
/// into place so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let fail = |e: &dyn std::fmt::Display| CliError::output(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| fail(&e))?;
        w.flush().map_err(|e| fail(&e))?;
    }
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

fn io_err(e: cplm_core::Error) -> std::io::Error {
    match e {
        cplm_core::Error::Io(e) => e,
        other => std::io::Error::other(other.to_string()),
    }
}

pub fn save_model(path: &Path, model: &CpModel) -> Result<(), CliError> {
    write_atomic(path, |w| model.write_cpd3(w).map_err(io_err))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Writes a tensor as an image when the extension names an image format,
/// otherwise as TNS3.
pub fn save_tensor_or_image(path: &Path, t: &DenseTensor3, scale: Scale) -> Result<(), CliError> {
    match ImageFormat::from_path(path) {
        Some(format) => {
            let img = image::tensor_to_image(t, scale).map_err(|e| CliError::input(e.to_string()))?;
            save_image(path, &img, format)
        }
        None => write_atomic(path, |w| t.write_tns3(w).map_err(io_err)),
    }
}

pub fn save_image(path: &Path, img: &RgbImage, format: ImageFormat) -> Result<(), CliError> {
    write_atomic(path, |w| {
        match format {
            ImageFormat::Png => image::write_png(w, img),
            ImageFormat::Ppm => image::write_ppm(w, img),
        }
        .map_err(io_err)
    })
}

/// Loads a reference for comparison: an image (converted at `scale`) or a TNS3 tensor.
pub fn load_reference(path: &Path, scale: Scale) -> Result<DenseTensor3, CliError> {
    if ImageFormat::from_path(path).is_some() {
        Ok(image::image_to_tensor(&load_image(path)?, scale))
    } else {
        let f = File::open(path).map_err(|e| read_error(path, e))?;
        DenseTensor3::read_tns3(BufReader::new(f)).map_err(|e| read_error(path, e))
    }
}
