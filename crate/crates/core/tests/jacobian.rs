use cplm_core::{build_jacobian, densify, normal_system, numerical_rank, residual, CpModel, DenseTensor3, Dims, ParamVector};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, max_dim: usize, max_rank: usize, lo: f64, hi: f64) -> CpModel {
    let dims = Dims::new(rng.random_range(1..=max_dim), rng.random_range(1..=max_dim), rng.random_range(1..=max_dim)).unwrap();
    let rank = rng.random_range(1..=max_rank);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    let (a, b, c) = (draw(dims.i * rank), draw(dims.j * rank), draw(dims.k * rank));
    CpModel::new(dims, rank, a, b, c).unwrap()
}

/// Dense `(m×n) ⊗ (p×q)`.
fn kron(x: &Mat<f64>, y: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(x.nrows() * y.nrows(), x.ncols() * y.ncols(), |i, j| {
        x[(i / y.nrows(), j / y.ncols())] * y[(i % y.nrows(), j % y.ncols())]
    })
}

fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn eye(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Jacobian assembled block by block from explicit Kronecker products.
fn kronecker_oracle(m: &CpModel) -> Mat<f64> {
    let d = m.dims();
    let rank = m.rank();
    let q = d.len();
    let p = m.shape().num_params();
    let mut j = Mat::<f64>::zeros(q, p);
    let mut offset = 0;
    for mode in 0..3 {
        let n = d.as_array()[mode];
        for r in 0..rank {
            let (a, b, c) = (col(m.column(0, r)), col(m.column(1, r)), col(m.column(2, r)));
            let block = match mode {
                0 => kron(&kron(&c, &b), &eye(d.i)),
                1 => kron(&kron(&c, &eye(d.j)), &a),
                _ => kron(&kron(&eye(d.k), &b), &a),
            };
            for row in 0..q {
                for cc in 0..n {
                    j[(row, offset + cc)] = -block[(row, cc)];
                }
            }
            offset += n;
        }
    }
    j
}

#[test]
fn matches_kronecker_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let m = random_model(&mut rng, 5, 3, -1.0, 1.0);
        let dense = densify(&build_jacobian(&m)).unwrap();
        let oracle = kronecker_oracle(&m);
        assert_eq!(dense, oracle);
    }
}

#[test]
fn matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let step = 1e-6;
    for _ in 0..25 {
        let m = random_model(&mut rng, 5, 3, 0.5, 1.5);
        let observed = DenseTensor3::from_fn(m.dims(), |_, _, _| rng.random()).unwrap();
        let shape = m.shape();
        let x = m.pack().into_vec();
        let j = densify(&build_jacobian(&m)).unwrap();
        for p in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[p] += step;
            xm[p] -= step;
            let fp = residual(&ParamVector::new(shape, xp).unwrap(), &observed).unwrap();
            let fm = residual(&ParamVector::new(shape, xm).unwrap(), &observed).unwrap();
            for q in 0..fp.len() {
                let fd = (fp[q] - fm[q]) / (2.0 * step);
                assert!((fd - j[(q, p)]).abs() < 1e-5, "entry ({q},{p}): fd {fd} vs {}", j[(q, p)]);
            }
        }
    }
}

#[test]
fn normal_system_matches_dense_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let m = random_model(&mut rng, 6, 4, -1.0, 1.0);
        let observed = DenseTensor3::from_fn(m.dims(), |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let jac = build_jacobian(&m);
        let f = residual(&m.pack(), &observed).unwrap();
        let ns = normal_system(&jac, &f).unwrap();
        let j = densify(&jac).unwrap();
        let gram = j.transpose() * &j;
        let fm = col(&f);
        let grad = j.transpose() * &fm;
        let scale = gram.norm_max().max(1.0);
        for r in 0..gram.nrows() {
            for c in 0..gram.ncols() {
                assert!((ns.gram[(r, c)] - gram[(r, c)]).abs() <= 1e-12 * scale);
            }
        }
        let gscale = grad.norm_max().max(1.0);
        for r in 0..grad.nrows() {
            assert!((ns.grad[r] - grad[(r, 0)]).abs() <= 1e-12 * gscale);
        }
    }
}

#[test]
fn gram_structural_count_for_3x4x5_rank_3() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = Dims::new(3, 4, 5).unwrap();
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.5..1.5)).collect::<Vec<f64>>();
    let m = CpModel::new(dims, 3, draw(9), draw(12), draw(15)).unwrap();
    let jac = build_jacobian(&m);
    assert_eq!((jac.nrows(), jac.ncols(), jac.nnz()), (60, 36, 540));
    let j = densify(&jac).unwrap();
    let gram = j.transpose() * &j;
    let nz = (0..36).flat_map(|r| (0..36).map(move |c| (r, c))).filter(|&(r, c)| gram[(r, c)] != 0.0).count();
    // Diagonal blocks are Γ ⊗ I (R²·n each); off-diagonal blocks are dense.
    let diag = 9 * (3 + 4 + 5);
    let off = 2 * 9 * (3 * 4 + 3 * 5 + 4 * 5);
    assert_eq!(diag + off, 954);
    assert_eq!(nz, 954);
}

#[test]
fn rank_is_bounded_by_scaling_gauge() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let m = random_model(&mut rng, 5, 3, 0.5, 1.5);
        let p = m.shape().num_params();
        let r = m.rank();
        let jac = build_jacobian(&m);
        let rank = numerical_rank(&jac, 1e-10).unwrap();
        assert!(rank <= p - 2 * r, "rank {rank} > P - 2R = {}", p - 2 * r);
        let sv = densify(&jac).unwrap().singular_values().unwrap();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        // Zero singular values of a tall J are not listed when Q < P.
        let listed_small = sv.iter().filter(|&&s| s < 1e-10 * smax).count();
        let small = listed_small + p.saturating_sub(sv.len());
        assert!(small >= 2 * r, "only {small} small singular values, need {}", 2 * r);
    }
}

#[test]
fn gauge_rescaling_leaves_reconstruction_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let m = random_model(&mut rng, 5, 3, 0.5, 1.5);
        let d = m.dims();
        let rank = m.rank();
        let (mut a, mut b, c) = (m.a().to_vec(), m.b().to_vec(), m.c().to_vec());
        for r in 0..rank {
            let s: f64 = rng.random_range(0.5..2.0);
            a[r * d.i..(r + 1) * d.i].iter_mut().for_each(|v| *v *= s);
            b[r * d.j..(r + 1) * d.j].iter_mut().for_each(|v| *v /= s);
        }
        let scaled = CpModel::new(d, rank, a, b, c).unwrap();
        let (x, y) = (m.reconstruct(), scaled.reconstruct());
        let diff = x.sub(&y).unwrap().frobenius_norm();
        assert!(diff <= 1e-13 * x.frobenius_norm());
    }
}

#[test]
fn frobenius_norm_matches_compensated_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let dims = Dims::new(rng.random_range(1..30), rng.random_range(1..30), rng.random_range(1..10)).unwrap();
        let t = DenseTensor3::from_fn(dims, |_, _, _| rng.random_range(-1e3..1e3)).unwrap();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for v in t.as_slice() {
            let y = v * v - comp;
            let s = sum + y;
            comp = (s - sum) - y;
            sum = s;
        }
        let oracle = sum.sqrt();
        assert!((t.frobenius_norm() - oracle).abs() <= 1e-12 * oracle);
    }
}
