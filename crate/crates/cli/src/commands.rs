use std::path::{Path, PathBuf};

use cplm_core::image::{self, ImageFormat};
use cplm_core::lm::RunOutput;
use cplm_core::{compression_percent, run, DenseTensor3, Dims, LmConfig, Method, RunSummary, Scale};
use serde::{Deserialize, Serialize};

use crate::args::{BenchArgs, CompareArgs, DecomposeArgs, InfoArgs, ReconstructArgs};
use crate::error::CliError;
use crate::io::{self as cio, Source};
use crate::settings::Settings;

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn compression(dims: Dims, rank: usize) -> cplm_core::Compression {
    let c = compression_percent(dims.i, dims.j, dims.k, rank);
    if c.degenerate {
        cio::warn(format!("rank {rank} stores at least as many numbers as the {dims} tensor; compression reported as 0"));
    }
    c
}

fn relative(residual: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        residual / norm
    } else {
        residual
    }
}

fn finish_summary(mut s: RunSummary, timings: bool) -> RunSummary {
    if !timings {
        s.total_seconds = 0.0;
    }
    s
}

fn write_trace(path: &Path, out: &RunOutput, timings: bool) -> Result<(), CliError> {
    cio::write_atomic(path, |w| cplm_core::write_trace_csv(w, &out.trace, timings))
}

#[derive(Serialize)]
struct DecomposeSummary {
    #[serde(flatten)]
    run: RunSummary,
    relative_residual: f64,
    dims: String,
    rank: usize,
    seed: u64,
    scale: Scale,
    linear_solver: cplm_core::LinearSolver,
    compression_percent: cplm_core::Compression,
    source: Source,
}

pub fn decompose(args: &DecomposeArgs) -> Result<(), CliError> {
    let settings = Settings::resolve(&args.solver)?;
    let rank = settings.require_rank()?;
    cplm_core::set_threads(settings.threads);
    let observed = cio::load_observed(&args.input, settings.scale)?;
    let dims = observed.tensor.dims();
    let comp = compression(dims, rank);

    let out = run(&observed.tensor, rank, &settings.lm).map_err(CliError::solver)?;

    if let Some(p) = &args.out {
        cio::save_model(p, &out.model)?;
    }
    if let Some(p) = &args.trace {
        write_trace(p, &out, settings.timings)?;
    }
    if let Some(p) = &args.reconstruction {
        let rec = out.model.reconstruct();
        if observed.image.is_none() && ImageFormat::from_path(p).is_some() && dims.k != 3 {
            return Err(CliError::input(format!("image output needs 3 channels, model is {dims}")));
        }
        cio::save_tensor_or_image(p, &rec, settings.scale)?;
    }
    let summary = DecomposeSummary {
        relative_residual: relative(out.summary.final_residual, observed.tensor.frobenius_norm()),
        run: finish_summary(out.summary, settings.timings),
        dims: dims.to_string(),
        rank,
        seed: settings.lm.seed,
        scale: settings.scale,
        linear_solver: settings.lm.linear_solver,
        compression_percent: comp,
        source: observed.source,
    };
    match &args.summary {
        Some(p) => cio::save_json(p, &summary),
        None => cio::print_json(&summary),
    }
}

#[derive(Serialize)]
struct ReconstructReport {
    dims: String,
    rank: usize,
    output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr_db: Option<f64>,
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<(), CliError> {
    let model = cio::load_model(&args.model)?;
    let dims = model.dims();
    let is_image = ImageFormat::from_path(&args.out).is_some();
    if is_image && dims.k != 3 {
        return Err(CliError::input(format!("image output needs 3 channels, model is {dims}")));
    }
    let rec = model.reconstruct();
    cio::save_tensor_or_image(&args.out, &rec, args.scale)?;

    let mut report = ReconstructReport {
        dims: dims.to_string(),
        rank: model.rank(),
        output: args.out.clone(),
        residual: None,
        relative_residual: None,
        psnr_db: None,
    };
    if let Some(path) = &args.reference {
        let reference = cio::load_reference(path, args.scale)?;
        let diff = reference.sub(&rec).map_err(|e| cio::read_error(path, e))?;
        let r = diff.frobenius_norm();
        report.residual = Some(r);
        report.relative_residual = Some(relative(r, reference.frobenius_norm()));
        if dims.k == 3 {
            let a = image::tensor_to_image(&reference, args.scale).map_err(|e| CliError::input(e.to_string()))?;
            let b = image::tensor_to_image(&rec, args.scale).map_err(|e| CliError::input(e.to_string()))?;
            report.psnr_db = Some(image::psnr_capped(&a, &b).map_err(|e| CliError::input(e.to_string()))?);
        }
    }
    cio::print_json(&report)
}

/// One row of a comparison or benchmark table.
struct Row {
    method: Method,
    result: Result<(RunSummary, f64), CliError>,
}

const ROW_HEADER: &str = "method,status,iters,jacobian_builds,residual_evals,final_residual,relative_residual,seconds,compression,reason";

fn row_csv(row: &Row, comp: u32, timings: bool) -> String {
    match &row.result {
        Ok((s, rel)) => format!(
            "{},ok,{},{},{},{},{},{},{},{}",
            row.method,
            s.iters,
            s.jacobian_builds,
            s.residual_evals,
            sci(s.final_residual),
            sci(*rel),
            if timings { format!("{:.6}", s.total_seconds) } else { String::new() },
            comp,
            s.reason
        ),
        Err(e) => format!("{},error,,,,,,,{},\"{}\"", row.method, comp, e.message.replace('"', "'")),
    }
}

fn solve_row(t: &DenseTensor3, rank: usize, cfg: &LmConfig, method: Method, timings: bool) -> Row {
    let cfg = LmConfig { method, ..cfg.clone() };
    let result = run(t, rank, &cfg)
        .map(|o| {
            let rel = relative(o.summary.final_residual, t.frobenius_norm());
            (finish_summary(o.summary, timings), rel)
        })
        .map_err(CliError::solver);
    Row { method, result }
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let settings = Settings::resolve(&args.solver)?;
    let rank = settings.require_rank()?;
    cplm_core::set_threads(settings.threads);
    let observed = cio::load_observed(&args.input, settings.scale)?;
    let dims = observed.tensor.dims();
    let comp = compression(dims, rank);
    let norm = observed.tensor.frobenius_norm();

    let mut rows = Vec::new();
    for method in [Method::Classic, Method::Modified] {
        let cfg = LmConfig { method, ..settings.lm.clone() };
        let result = run(&observed.tensor, rank, &cfg).map_err(CliError::solver);
        if let (Ok(out), Some(dir)) = (&result, &args.trace_dir) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::output(format!("{}: {e}", dir.display())))?;
            write_trace(&dir.join(format!("trace_{method}.csv")), out, settings.timings)?;
        }
        let result = result.map(|o| {
            let rel = relative(o.summary.final_residual, norm);
            (finish_summary(o.summary, settings.timings), rel)
        });
        rows.push(Row { method, result });
    }

    println!("{dims} rank {rank}, compression {}%", comp.rounded);
    println!("{:<6} {:>7} {:>10} {:>9} {:>22} {:>12} {:>10}  reason", "method", "iters", "jac_builds", "res_evals", "final_residual", "relative", "seconds");
    for row in &rows {
        match &row.result {
            Ok((s, rel)) => println!(
                "{:<6} {:>7} {:>10} {:>9} {:>22.12} {:>12.4e} {:>10.3}  {}",
                row.method.as_str(),
                s.iters,
                s.jacobian_builds,
                s.residual_evals,
                s.final_residual,
                rel,
                s.total_seconds,
                s.reason
            ),
            Err(e) => println!("{:<6} failed: {e}", row.method.as_str()),
        }
    }
    if let Some(p) = &args.out {
        cio::write_atomic(p, |w| {
            writeln!(w, "dims,rank,{ROW_HEADER}")?;
            for row in &rows {
                writeln!(w, "{dims},{rank},{}", row_csv(row, comp.rounded, settings.timings))?;
            }
            Ok(())
        })?;
    }
    match rows.into_iter().find_map(|r| r.result.err()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridEntry {
    dims: String,
    ranks: Vec<usize>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn load_grid(path: &Path) -> Result<Vec<(Dims, Vec<usize>, Vec<u64>)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| cio::read_error(path, e))?;
    let entries: Vec<GridEntry> = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    entries
        .into_iter()
        .map(|g| {
            let dims = g.dims.parse::<Dims>().map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            Ok((dims, g.ranks, g.seeds))
        })
        .collect()
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let settings = Settings::resolve(&args.solver)?;
    cplm_core::set_threads(settings.threads);
    let mut grid = Vec::new();
    if let Some(p) = &args.grid {
        grid.extend(load_grid(p)?);
    }
    for &d in &args.dims {
        grid.push((d, args.ranks.clone(), args.seeds.clone()));
    }
    let cells: Vec<(Dims, usize, u64)> = grid
        .iter()
        .flat_map(|(d, ranks, seeds)| ranks.iter().flat_map(move |&r| seeds.iter().map(move |&s| (*d, r, s))))
        .collect();
    if cells.is_empty() || args.methods.is_empty() {
        return Err(CliError::usage("benchmark grid is empty: give --dims and --ranks, or --grid"));
    }
    if cells.iter().any(|c| c.1 == 0) {
        return Err(CliError::usage("ranks must be at least 1"));
    }

    let mut lines = vec![format!("dims,rank,seed,{ROW_HEADER}")];
    for (dims, rank, seed) in cells {
        let comp = compression(dims, rank);
        let t = cio::synthetic(dims, args.true_rank, seed);
        let cfg = LmConfig { seed, ..settings.lm.clone() };
        for &method in &args.methods {
            let row = match &t {
                Ok(t) => solve_row(t, rank, &cfg, method, settings.timings),
                Err(e) => Row { method, result: Err(CliError { status: e.status, message: e.message.clone() }) },
            };
            if let Err(e) = &row.result {
                cio::warn(format!("{dims} rank {rank} seed {seed} {method}: {e}"));
            }
            lines.push(format!("{dims},{rank},{seed},{}", row_csv(&row, comp.rounded, settings.timings)));
        }
    }
    match &args.out {
        Some(p) => cio::write_atomic(p, |w| lines.iter().try_for_each(|l| writeln!(w, "{l}"))),
        None => {
            lines.iter().for_each(|l| println!("{l}"));
            Ok(())
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Info {
    Tensor { dims: String, entries: usize, frobenius_norm: f64 },
    Model { dims: String, rank: usize, parameters: usize, compression_percent: cplm_core::Compression },
    Image { width: usize, height: usize, tensor_dims: String },
    Compression { dims: String, rank: usize, parameters: usize, compression_percent: cplm_core::Compression },
}

fn sniff(path: &Path) -> Result<[u8; 4], CliError> {
    use std::io::Read;
    let mut magic = [0u8; 4];
    let mut f = std::fs::File::open(path).map_err(|e| cio::read_error(path, e))?;
    f.read_exact(&mut magic).map_err(|e| cio::read_error(path, e))?;
    Ok(magic)
}

pub fn info(args: &InfoArgs) -> Result<(), CliError> {
    let info = if let Some(path) = &args.path {
        if ImageFormat::from_path(path).is_some() {
            let img = cio::load_image(path)?;
            Info::Image { width: img.width(), height: img.height(), tensor_dims: format!("{}x{}x3", img.height(), img.width()) }
        } else if &sniff(path)? == cplm_core::model::CPD3_MAGIC {
            let m = cio::load_model(path)?;
            let d = m.dims();
            Info::Model {
                dims: d.to_string(),
                rank: m.rank(),
                parameters: m.shape().num_params(),
                compression_percent: compression(d, m.rank()),
            }
        } else {
            let t = DenseTensor3::load_tns3(path).map_err(|e| cio::read_error(path, e))?;
            Info::Tensor { dims: t.dims().to_string(), entries: t.dims().len(), frobenius_norm: t.frobenius_norm() }
        }
    } else {
        let d = args.dims.expect("clap requires dims without a path");
        let rank = args.rank.expect("clap requires rank with dims");
        if rank == 0 {
            return Err(CliError::usage("rank must be at least 1"));
        }
        Info::Compression {
            dims: d.to_string(),
            rank,
            parameters: rank * (d.i + d.j + d.k),
            compression_percent: compression(d, rank),
        }
    };
    cio::print_json(&info)
}
