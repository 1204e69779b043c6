//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use cplm_core::lm::CpProblem;
use cplm_core::{
    build_jacobian, compression_percent, densify, image_to_tensor, normal_system, numerical_rank, pack, psnr, residual,
    run, synthetic_low_rank, tensor_to_image, unpack, CpModel, DenseTensor3, Dims, IterationRecord, LinearSolver,
    LmConfig, LmSolver, Method, ParamVector, RgbImage, RunOutput, Scale,
};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Traces from every solver run in the suite, checked together by criterion 6.
#[derive(Default)]
struct Runs {
    traces: Vec<(String, Vec<IterationRecord>)>,
}

impl Runs {
    fn keep(&mut self, label: impl Into<String>, out: &RunOutput) {
        self.traces.push((label.into(), out.trace.clone()));
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    let s = elapsed.as_secs_f64();
    ensure(s < limit_s, || format!("took {s:.1}s, limit {limit_s}s"))
}

fn random_model(rng: &mut ChaCha8Rng, max_dim: usize, max_rank: usize) -> CpModel {
    let dims = Dims::new(rng.random_range(1..=max_dim), rng.random_range(1..=max_dim), rng.random_range(1..=max_dim)).unwrap();
    let rank = rng.random_range(1..=max_rank);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.5..1.5)).collect::<Vec<f64>>();
    let (a, b, c) = (draw(dims.i * rank), draw(dims.j * rank), draw(dims.k * rank));
    CpModel::new(dims, rank, a, b, c).unwrap()
}

fn jacobian_matches_finite_differences() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let step = 1e-6;
    let mut worst = 0.0f64;
    let mut entries = 0;
    let models = 25;
    for _ in 0..models {
        let m = random_model(&mut rng, 5, 3);
        let observed = DenseTensor3::from_fn(m.dims(), |_, _, _| rng.random()).unwrap();
        let shape = m.shape();
        let x = m.pack().into_vec();
        let j = densify(&build_jacobian(&m)).map_err(|e| e.to_string())?;
        for p in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[p] += step;
            xm[p] -= step;
            let fp = residual(&ParamVector::new(shape, xp).unwrap(), &observed).unwrap();
            let fm = residual(&ParamVector::new(shape, xm).unwrap(), &observed).unwrap();
            for q in 0..fp.len() {
                let fd = (fp[q] - fm[q]) / (2.0 * step);
                worst = worst.max((fd - j[(q, p)]).abs());
                entries += 1;
            }
        }
    }
    ensure(worst < 1e-5, || format!("max |J - FD| = {worst:.3e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("{models} models, {entries} entries, max |J - FD| = {worst:.2e}"))
}

fn structural_counts() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let dims = Dims::new(3, 4, 5).unwrap();
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.5..1.5)).collect::<Vec<f64>>();
    let m = CpModel::new(dims, 3, draw(9), draw(12), draw(15)).unwrap();
    let jac = build_jacobian(&m);
    ensure((jac.nrows(), jac.ncols()) == (60, 36), || format!("J is {}x{}", jac.nrows(), jac.ncols()))?;
    ensure(jac.nnz() == 540, || format!("J has {} structural entries", jac.nnz()))?;
    let f = residual(&m.pack(), &DenseTensor3::zeros(dims)).unwrap();
    let ns = normal_system(&jac, &f).map_err(|e| e.to_string())?;
    ensure((ns.gram.nrows(), ns.gram.ncols()) == (36, 36), || "JᵀJ is not 36x36".into())?;
    // Dense oracle first, then the assertion on the count.
    let j = densify(&jac).map_err(|e| e.to_string())?;
    let gram = j.transpose() * &j;
    let oracle = (0..36).flat_map(|r| (0..36).map(move |c| (r, c))).filter(|&(r, c)| gram[(r, c)] != 0.0).count();
    let ours = (0..36).flat_map(|r| (0..36).map(move |c| (r, c))).filter(|&(r, c)| ns.gram[(r, c)] != 0.0).count();
    ensure(oracle == 954, || format!("dense oracle counts {oracle} nonzeros in JᵀJ"))?;
    ensure(ours == 954, || format!("normal_system has {ours} nonzeros"))?;
    within(start.elapsed(), 1.0)?;
    Ok("J 60x36 with 540 entries, JᵀJ 36x36 with 954 nonzeros".into())
}

fn rank_deficiency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let models = 60;
    for n in 0..models {
        let m = random_model(&mut rng, 5, 3);
        let (p, r) = (m.shape().num_params(), m.rank());
        let jac = build_jacobian(&m);
        let rank = numerical_rank(&jac, 1e-10).map_err(|e| e.to_string())?;
        ensure(rank <= p - 2 * r, || format!("model {n}: rank {rank} > P - 2R = {}", p - 2 * r))?;
        let sv = densify(&jac).unwrap().singular_values().map_err(|e| format!("{e:?}"))?;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        // A short J lists only Q singular values; the other P - Q are zero.
        let small = sv.iter().filter(|&&s| s < 1e-10 * smax).count() + p.saturating_sub(sv.len());
        ensure(small >= 2 * r, || format!("model {n}: {small} small singular values, need {}", 2 * r))?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("{models} models, rank <= P - 2R and >= 2R singular values below 1e-10 smax"))
}

fn normal_system_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let instances = 30;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let m = random_model(&mut rng, 6, 4);
        let observed = DenseTensor3::from_fn(m.dims(), |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let jac = build_jacobian(&m);
        let f = residual(&m.pack(), &observed).unwrap();
        let ns = normal_system(&jac, &f).map_err(|e| e.to_string())?;
        let j = densify(&jac).unwrap();
        let gram = j.transpose() * &j;
        let fcol = Mat::from_fn(f.len(), 1, |i, _| f[i]);
        let grad = j.transpose() * &fcol;
        let gscale = gram.norm_max();
        for r in 0..gram.nrows() {
            for c in 0..gram.ncols() {
                worst = worst.max((ns.gram[(r, c)] - gram[(r, c)]).abs() / gscale);
            }
        }
        let vscale = grad.norm_max().max(f64::MIN_POSITIVE);
        for r in 0..grad.nrows() {
            worst = worst.max((ns.grad[r] - grad[(r, 0)]).abs() / vscale);
        }
    }
    ensure(worst <= 1e-12, || format!("max relative deviation {worst:.3e}"))?;
    Ok(format!("{instances} instances, max relative deviation {worst:.2e}"))
}

fn exact_recovery(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let dims = Dims::new(10, 10, 10).unwrap();
    let t = synthetic_low_rank(dims, 3, 2024).unwrap();
    let norm = t.frobenius_norm();
    let mut rels = Vec::new();
    for seed in 0..5 {
        let cfg = LmConfig { method: Method::Modified, max_iters: 500, seed, rel_tol: 1e-7, ..LmConfig::default() };
        let out = run(&t, 3, &cfg).map_err(|e| e.to_string())?;
        rels.push(out.summary.final_residual / norm);
        runs.keep(format!("recovery seed {seed}"), &out);
    }
    let best = rels.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(best < 1e-5, || format!("best relative residual {best:.3e}"))?;
    within(start.elapsed(), 60.0)?;
    let list: Vec<String> = rels.iter().map(|r| format!("{r:.1e}")).collect();
    Ok(format!("best relative residual {best:.2e} over restarts [{}]", list.join(", ")))
}

fn monotone_descent(runs: &Runs) -> Outcome {
    let mut accepted = 0;
    let mut rejected = 0;
    for (label, trace) in &runs.traces {
        for (k, r) in trace.iter().enumerate() {
            if r.accepted {
                accepted += 1;
                ensure(r.residual_norm_after < r.residual_norm_before, || format!("{label}: iteration {} accepted without descent", r.iter))?;
            } else {
                rejected += 1;
                ensure(r.residual_norm_after == r.residual_norm_before, || format!("{label}: iteration {} rejected but residual changed", r.iter))?;
                if let Some(next) = trace.get(k + 1) {
                    ensure(next.mu > r.mu, || format!("{label}: iteration {} rejected without raising mu", r.iter))?;
                }
            }
        }
    }
    // Bitwise check of the iterate on a run forced to reject early.
    let t = DenseTensor3::uniform(Dims::new(6, 5, 4).unwrap(), 106);
    let problem = CpProblem::new(&t, 4, LinearSolver::Schur).map_err(|e| e.to_string())?;
    let x0 = CpModel::uniform(t.dims(), 4, 6).unwrap().pack().into_vec();
    for method in [Method::Classic, Method::Modified] {
        let cfg = LmConfig { method, mu0: Some(1e-12), max_iters: 80, ..LmConfig::default() };
        let mut s = LmSolver::new(problem, x0.clone(), cfg).map_err(|e| e.to_string())?;
        for _ in 0..80 {
            let before = s.state().x.clone();
            let mu = s.state().mu;
            let rec = s.iterate().map_err(|e| e.to_string())?;
            if rec.accepted {
                accepted += 1;
                ensure(rec.residual_norm_after < rec.residual_norm_before, || format!("{method}: accepted without descent"))?;
            } else {
                rejected += 1;
                let same = s.state().x.iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure(same, || format!("{method}: rejected step moved x"))?;
                ensure(s.state().mu > mu, || format!("{method}: rejected step did not raise mu"))?;
            }
        }
    }
    ensure(rejected > 0, || "no rejected iterations were exercised".into())?;
    Ok(format!("{} runs, {accepted} accepted and {rejected} rejected iterations", runs.traces.len() + 2))
}

fn lm_vs_mlm(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let t = DenseTensor3::uniform(Dims::new(20, 20, 12).unwrap(), 107);
    let mut res = Vec::new();
    for method in [Method::Classic, Method::Modified] {
        let cfg = LmConfig { method, seed: 7, max_iters: LM_VS_MLM_ITERS, grad_tol: 1e-6, ..LmConfig::default() };
        let out = run(&t, 30, &cfg).map_err(|e| e.to_string())?;
        runs.keep(format!("20x20x12 {method}"), &out);
        let r0 = out.trace.first().map_or(out.summary.final_residual, |r| r.residual_norm_before);
        res.push((out.summary.clone(), r0));
    }
    let ((lm, r0), (mlm, _)) = (&res[0], &res[1]);
    let rel = (lm.final_residual - mlm.final_residual).abs() / lm.final_residual.min(mlm.final_residual);
    let per_lm = lm.jacobian_builds as f64 / (r0 - lm.final_residual);
    let per_mlm = mlm.jacobian_builds as f64 / (r0 - mlm.final_residual);
    let detail = format!(
        "lm {:.6} ({} iters, {} builds, {}), mlm {:.6} ({} iters, {} builds, {}), gap {:.3}%, builds per unit reduction {per_lm:.2} vs {per_mlm:.2}",
        lm.final_residual, lm.iters, lm.jacobian_builds, lm.reason, mlm.final_residual, mlm.iters, mlm.jacobian_builds, mlm.reason, 100.0 * rel
    );
    ensure(rel <= 1e-3, || detail.clone())?;
    ensure(per_mlm <= per_lm, || detail.clone())?;
    within(start.elapsed(), 300.0).map_err(|e| format!("{detail}; {e}"))?;
    Ok(detail)
}

const LM_VS_MLM_ITERS: usize = 4000;

fn compression_table() -> Outcome {
    let start = Instant::now();
    let table: &[((usize, usize, usize), usize, u32)] = &[
        ((100, 100, 3), 20, 87),
        ((100, 100, 3), 50, 67),
        ((100, 100, 3), 75, 50),
        ((35, 25, 15), 40, 77),
        ((20, 20, 12), 30, 68),
        ((28, 18, 16), 35, 73),
        ((45, 35, 20), 25, 91),
        ((45, 35, 20), 40, 87),
        ((45, 35, 20), 60, 81),
        ((45, 35, 25), 25, 93),
        ((45, 35, 25), 40, 89),
        ((45, 35, 25), 60, 84),
        ((45, 35, 30), 25, 94),
        ((45, 35, 30), 40, 91),
        ((45, 35, 30), 60, 86),
    ];
    let mut misses = Vec::new();
    for &((i, j, k), r, expected) in table {
        let c = compression_percent(i, j, k, r);
        if c.rounded != expected {
            misses.push(format!("{i}x{j}x{k} R={r}: {:.2} -> {} vs {expected}", c.percent, c.rounded));
        }
    }
    within(start.elapsed(), 1.0)?;
    if misses.is_empty() {
        Ok(format!("{} entries reproduced", table.len()))
    } else {
        Err(format!("{} of {} entries differ: {}", misses.len(), table.len(), misses.join("; ")))
    }
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for _ in 0..50 {
        let dims = Dims::new(rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9)).unwrap();
        let t = DenseTensor3::from_fn(dims, |_, _, _| f64::from_bits(rng.random::<u64>() >> 2)).unwrap();
        let mut buf = Vec::new();
        t.write_tns3(&mut buf).map_err(|e| e.to_string())?;
        let back = DenseTensor3::read_tns3(&buf[..]).map_err(|e| e.to_string())?;
        let mut again = Vec::new();
        back.write_tns3(&mut again).unwrap();
        ensure(buf == again, || format!("TNS3 {dims} not bitwise"))?;

        let m = random_model(&mut rng, 8, 4);
        let mut buf = Vec::new();
        m.write_cpd3(&mut buf).map_err(|e| e.to_string())?;
        let back = CpModel::read_cpd3(&buf[..]).map_err(|e| e.to_string())?;
        let mut again = Vec::new();
        back.write_cpd3(&mut again).unwrap();
        ensure(buf == again, || format!("CPD3 {} not bitwise", m.dims()))?;
    }
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..16), rng.random_range(1..16));
        let px: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
        let img = RgbImage::new(w, h, px).unwrap();
        for scale in [Scale::Unit, Scale::Byte] {
            let back = tensor_to_image(&image_to_tensor(&img, scale), scale).map_err(|e| e.to_string())?;
            ensure(back == img, || format!("{w}x{h} image not lossless at {scale} scale"))?;
        }
    }
    let shapes = 1000;
    for _ in 0..shapes {
        let m = random_model(&mut rng, 10, 6);
        let x = pack(&m);
        ensure(unpack(&x).map_err(|e| e.to_string())? == m, || format!("pack/unpack failed for {} rank {}", m.dims(), m.rank()))?;
    }
    Ok(format!("TNS3 and CPD3 bitwise, images lossless at both scales, pack/unpack on {shapes} shapes"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for n in 0..2 {
        let (trace, model) = (dir.path().join(format!("trace{n}.csv")), dir.path().join(format!("model{n}.cpd3")));
        let status = Command::new(env!("CARGO_BIN_EXE_cplm"))
            .args(["decompose", "--synthetic", "12x10x8", "--data-seed", "3", "--rank", "4", "--seed", "11"])
            .args(["--max-iters", "60", "--no-timing", "--summary"])
            .arg(dir.path().join(format!("summary{n}.json")))
            .arg("--trace")
            .arg(&trace)
            .arg("--out")
            .arg(&model)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("decompose exited with {status}"))?;
        outputs.push((std::fs::read(trace).unwrap(), std::fs::read(model).unwrap()));
    }
    ensure(outputs[0].0 == outputs[1].0, || "trace CSVs differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "CPD3 files differ".into())?;
    let rows = outputs[0].0.iter().filter(|&&b| b == b'\n').count() - 1;
    Ok(format!("two invocations gave identical trace ({rows} rows) and CPD3 ({} bytes)", outputs[0].1.len()))
}

/// Smooth 100x100 test picture: a petal pattern over a diagonal gradient.
fn test_image() -> RgbImage {
    RgbImage::from_fn(100, 100, |r, c| {
        let (y, x) = (r as f64 - 49.5, c as f64 - 49.5);
        let rad = (x * x + y * y).sqrt();
        let theta = y.atan2(x);
        let petal = (0.5 + 0.5 * (5.0 * theta + rad / 9.0).cos()) * (-rad / 38.0).exp();
        let red = 40.0 + 200.0 * petal;
        let green = 30.0 + 90.0 * (r as f64 / 99.0) + 60.0 * petal * (1.0 - petal);
        let blue = 60.0 + 120.0 * (c as f64 / 99.0) * (1.0 - petal);
        [red, green, blue].map(|v| v.round().clamp(0.0, 255.0) as u8)
    })
    .unwrap()
}

const LADDER_ITERS: usize = 25;

fn image_ladder(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let img = test_image();
    let t = image_to_tensor(&img, Scale::Unit);
    let mut rows = Vec::new();
    for rank in [20, 50, 75] {
        let cfg = LmConfig { seed: 5, max_iters: LADDER_ITERS, ..LmConfig::default() };
        let out = run(&t, rank, &cfg).map_err(|e| e.to_string())?;
        runs.keep(format!("image rank {rank}"), &out);
        let rec = tensor_to_image(&out.model.reconstruct(), Scale::Unit).map_err(|e| e.to_string())?;
        let p = psnr(&img, &rec).map_err(|e| e.to_string())?;
        rows.push((rank, out.summary.final_residual, p));
    }
    let detail = rows.iter().map(|(r, res, p)| format!("R={r}: residual {res:.4}, PSNR {p:.2} dB")).collect::<Vec<_>>().join("; ");
    for w in rows.windows(2) {
        ensure(w[1].1 <= w[0].1, || format!("residual increased: {detail}"))?;
        ensure(w[1].2 >= w[0].2, || format!("PSNR decreased: {detail}"))?;
    }
    within(start.elapsed(), 600.0).map_err(|e| format!("{detail}; {e}"))?;
    Ok(format!("{detail} ({:.0}s)", start.elapsed().as_secs_f64()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(match p.downcast_ref::<String>() {
            Some(s) => format!("panicked: {s}"),
            None => match p.downcast_ref::<&str>() {
                Some(s) => format!("panicked: {s}"),
                None => "panicked".into(),
            },
        }),
    }
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| filter.is_empty() || filter.contains(&n);
    let mut runs = Runs::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut check = |n: usize, title: &'static str, f: &mut dyn FnMut(&mut Runs) -> Outcome, runs: &mut Runs| {
        if wanted(n) {
            let t0 = Instant::now();
            let r = guarded(AssertUnwindSafe(|| f(runs)).0);
            eprintln!("criterion {n} finished in {:.1}s", t0.elapsed().as_secs_f64());
            results.push((n, title, r));
        }
    };
    check(1, "Jacobian matches finite differences", &mut |_| jacobian_matches_finite_differences(), &mut runs);
    check(2, "structural counts", &mut |_| structural_counts(), &mut runs);
    check(3, "rank deficiency", &mut |_| rank_deficiency(), &mut runs);
    check(4, "normal-system oracle", &mut |_| normal_system_oracle(), &mut runs);
    check(5, "exact recovery", &mut exact_recovery, &mut runs);
    check(7, "LM vs MLM equivalence", &mut lm_vs_mlm, &mut runs);
    check(8, "compression metric", &mut |_| compression_table(), &mut runs);
    check(9, "round trips", &mut |_| round_trips(), &mut runs);
    check(10, "determinism", &mut |_| determinism(), &mut runs);
    check(11, "image ladder", &mut image_ladder, &mut runs);
    check(6, "monotone descent", &mut |r| monotone_descent(r), &mut runs);
    results.sort_by_key(|r| r.0);

    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (n, title, r) in &results {
        let line = match r {
            Ok(d) => format!("criterion {n:>2} PASS {title}: {d}"),
            Err(d) => {
                failed += 1;
                format!("criterion {n:>2} FAIL {title}: {d}")
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    writeln!(out, "acceptance: {} passed, {failed} failed", results.len() - failed).unwrap();
    drop(out);
    if failed > 0 {
        std::process::exit(1);
    }
}
