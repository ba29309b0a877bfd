use fetps::io::{synthesize, SynthConfig, SynthLayout};
use fetps::system::{saddle_matrix_dense, DEFAULT_DENSE_CAP};
use fetps::{
    condense, lagrange_interpolate, recover_auxiliary, solve_reduced, solve_saddle_dense, Domain,
    ElementKind, Error, FieldKind, Mesh, Preconditioner, SaddleWeights, ScatteredData,
    SolverConfig, SystemBlocks,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(dim: usize, n: usize, kind: ElementKind) -> Mesh {
    Mesh::structured(Domain::unit(dim).unwrap(), &vec![n; dim], kind).unwrap()
}

fn sample(field: FieldKind, n: usize, seed: u64, dim: usize) -> ScatteredData {
    synthesize(&SynthConfig {
        field,
        n,
        seed,
        domain: Domain::unit(dim).unwrap(),
        noise: 0.0,
        layout: SynthLayout::Uniform,
    })
    .unwrap()
}

fn cases() -> Vec<(Mesh, ScatteredData)> {
    vec![
        (
            unit(2, 2, ElementKind::Simplex),
            sample(FieldKind::Franke, 20, 1, 2),
        ),
        (
            unit(2, 4, ElementKind::Parallelotope),
            sample(FieldKind::GaussianBump, 40, 2, 2),
        ),
        (
            unit(3, 2, ElementKind::Simplex),
            sample(FieldKind::Quadratic, 30, 3, 3),
        ),
        (
            unit(3, 1, ElementKind::Parallelotope),
            sample(FieldKind::SinProduct, 12, 4, 3),
        ),
    ]
}

fn tight() -> SolverConfig {
    SolverConfig::default().with_tolerance(1e-13)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

#[test]
fn reduced_operator_is_the_dense_schur_complement() {
    for (mesh, data) in cases() {
        let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
        let n = blocks.n();
        for alpha in [1e-3, 1.0] {
            let w = SaddleWeights::new(alpha).unwrap();
            let a = saddle_matrix_dense(&blocks, w);
            let size = a.nrows();
            let auu = a.view((0, 0), (n, n));
            let aur = a.view((0, n), (n, size - n));
            let arr = a.view((n, n), (size - n, size - n)).clone_owned();
            let x = arr.lu().solve(&aur.transpose()).unwrap();
            let schur = auu - aur * x;
            let s = condense(&blocks, w).unwrap().matrix().to_dense();
            let diff = (&s - &schur).amax();
            assert!(diff <= 1e-9 * schur.amax(), "deviation {diff:e}");
        }
    }
}

#[test]
fn reduced_operator_identities() {
    for (mesh, data) in cases() {
        let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
        let n = blocks.n();
        let s1 = condense(&blocks, SaddleWeights::new(0.3).unwrap()).unwrap();
        let s2 = condense(&blocks, SaddleWeights::new(0.6).unwrap()).unwrap();
        let ones = vec![1.0; n];
        let lhs = s1.apply(&ones);
        let rhs = blocks.r.mul_vec(&ones);
        assert!(max_rel(&lhs, &rhs) < 1e-10);
        let dense = s1.matrix().to_dense();
        assert!((&dense - dense.transpose()).amax() <= 1e-12 * dense.amax());
        // S(2α) - S(α) = α Σ_k B_kᵀ D⁻¹ K D⁻¹ B_k
        let inv: Vec<f64> = blocks.gram.iter().map(|c| 1.0 / c).collect();
        let mut expect = DMatrix::<f64>::zeros(n, n);
        let k = blocks.k.to_dense();
        for bk in &blocks.b {
            let g = DMatrix::from_diagonal(&DVector::from_vec(inv.clone())) * bk.to_dense();
            expect += g.transpose() * &k * &g * 0.3;
        }
        let got = s2.matrix().to_dense() - dense;
        assert!((&got - &expect).amax() <= 1e-10 * expect.amax().max(1.0));
    }
}

#[test]
fn zero_right_hand_side_gives_zero() {
    let (mesh, data) = cases().remove(0);
    let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
    let w = SaddleWeights::new(1.0).unwrap();
    let op = condense(&blocks, w).unwrap();
    let rep = solve_reduced(&op, &vec![0.0; blocks.n()], &SolverConfig::default()).unwrap();
    assert!(rep.u.iter().all(|&v| v == 0.0));
    let aux = recover_auxiliary(&blocks, &rep.u, w).unwrap();
    assert!(aux
        .sigma
        .iter()
        .chain(&aux.phi)
        .flatten()
        .all(|&v| v == 0.0));
    let dense = solve_saddle_dense(&blocks, w, &vec![0.0; blocks.n()], DEFAULT_DENSE_CAP).unwrap();
    assert!(dense
        .u
        .iter()
        .chain(dense.sigma.iter().flatten())
        .chain(dense.phi.iter().flatten())
        .all(|&v| v == 0.0));
}

#[test]
fn iterative_and_dense_paths_agree() {
    for (mesh, data) in cases() {
        let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
        for alpha in [1e-3, 1.0] {
            let w = SaddleWeights::new(alpha).unwrap();
            let op = condense(&blocks, w).unwrap();
            for pre in [Preconditioner::Jacobi, Preconditioner::None] {
                let cfg = SolverConfig {
                    preconditioner: pre,
                    ..tight()
                };
                let rep = solve_reduced(&op, &blocks.f, &cfg).unwrap();
                let res: Vec<f64> = op
                    .apply(&rep.u)
                    .iter()
                    .zip(&blocks.f)
                    .map(|(a, b)| a - b)
                    .collect();
                assert!(
                    dot(&res, &res).sqrt() <= 1e-13 * dot(&blocks.f, &blocks.f).sqrt() * 1.0001
                );
                let red = recover_auxiliary(&blocks, &rep.u, w).unwrap();
                let dense = solve_saddle_dense(&blocks, w, &blocks.f, DEFAULT_DENSE_CAP).unwrap();
                assert!(max_rel(&red.u, &dense.u) < 1e-8);
                for k in 0..blocks.dim {
                    assert!(max_rel(&red.sigma[k], &dense.sigma[k]) < 1e-8);
                    assert!(max_rel(&red.phi[k], &dense.phi[k]) < 1e-8);
                }
            }
        }
    }
}

#[test]
fn recovered_triple_solves_the_saddle_system() {
    for (mesh, data) in cases() {
        let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
        let w = SaddleWeights::new(0.05).unwrap();
        let op = condense(&blocks, w).unwrap();
        let u = solve_reduced(&op, &blocks.f, &tight()).unwrap().u;
        let t = recover_auxiliary(&blocks, &u, w).unwrap();
        let a = saddle_matrix_dense(&blocks, w);
        let mut x = u.clone();
        x.extend(t.sigma.iter().flatten());
        x.extend(t.phi.iter().flatten());
        let mut rhs = DVector::zeros(a.nrows());
        rhs.rows_mut(0, blocks.n()).copy_from_slice(&blocks.f);
        let res = (&a * DVector::from_vec(x) - &rhs).norm() / rhs.norm();
        assert!(res < 1e-8, "saddle residual {res:e}");
        for k in 0..blocks.dim {
            let bu = blocks.b[k].mul_vec(&u);
            let ds: Vec<f64> = t.sigma[k]
                .iter()
                .zip(&blocks.gram)
                .map(|(s, c)| s * c)
                .collect();
            assert!(max_rel(&ds, &bu) < 1e-9);
        }
    }
}

#[test]
fn auxiliary_of_a_coordinate_function() {
    let (mesh, data) = cases().remove(0);
    let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
    let u = lagrange_interpolate(&mesh, &|x: &[f64]| x[0]);
    let t = recover_auxiliary(&blocks, &u, SaddleWeights::new(1.0).unwrap()).unwrap();
    assert!(t.sigma[0].iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(t.sigma[1].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn affine_data_is_reproduced_by_the_reduced_solve() {
    let mesh = unit(2, 6, ElementKind::Simplex);
    let sites = sample(FieldKind::Franke, 40, 9, 2);
    let l = |x: &[f64]| 0.3 - 1.5 * x[0] + 0.8 * x[1];
    let z: Vec<f64> = sites.points().map(l).collect();
    let data = sites.with_values(z).unwrap();
    let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
    let interp = lagrange_interpolate(&mesh, &l);
    for alpha in [1e-4, 1e-1, 1.0, 10.0] {
        let op = condense(&blocks, SaddleWeights::new(alpha).unwrap()).unwrap();
        let u = solve_reduced(&op, &blocks.f, &tight()).unwrap().u;
        assert!(max_rel(&u, &interp) < 1e-8, "α = {alpha}");
    }
}

#[test]
fn energy_identity_and_galerkin_orthogonality() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (mesh, data) in cases() {
        let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
        let op = condense(&blocks, SaddleWeights::new(1e-2).unwrap()).unwrap();
        let u = solve_reduced(&op, &blocks.f, &tight()).unwrap().u;
        let fu = dot(&blocks.f, &u);
        assert!((op.bilinear(&u, &u) - fu).abs() <= 1e-8 * fu.abs());
        for _ in 0..20 {
            let v: Vec<f64> = (0..blocks.n())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let a = op.bilinear(&u, &v);
            let f = dot(&blocks.f, &v);
            let scale = (op.bilinear(&u, &u) * op.bilinear(&v, &v)).sqrt();
            assert!((a - f).abs() <= 1e-8 * scale);
        }
    }
}

#[test]
fn reduced_operator_is_positive_definite_for_admissible_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (mesh, data) in cases() {
        let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
        assert!(blocks.n() <= 200);
        let op = condense(&blocks, SaddleWeights::new(1e-2).unwrap()).unwrap();
        let eig = SymmetricEigen::new(op.matrix().to_dense());
        assert!(eig.eigenvalues.min() > 0.0);
        for _ in 0..100 {
            let v: Vec<f64> = (0..blocks.n())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            assert!(op.bilinear(&v, &v) > 0.0);
        }
    }
}

#[test]
fn coplanar_data_makes_the_operator_singular() {
    let mesh = unit(3, 2, ElementKind::Simplex);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            vec![a, b, 0.5 * (a + b)]
        })
        .collect();
    let z: Vec<f64> = pts.iter().map(|p| p[0] - p[1]).collect();
    let data = ScatteredData::from_points(&pts, z).unwrap();
    assert!(!data.is_affinely_spanning());
    let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
    let w = SaddleWeights::new(1.0).unwrap();
    let op = condense(&blocks, w).unwrap();
    let dense = op.matrix().to_dense();
    let norm = dense.amax();
    let eig = SymmetricEigen::new(dense);
    assert!(eig.eigenvalues.min() <= 1e-10 * norm);
    assert!(matches!(
        solve_saddle_dense(&blocks, w, &blocks.f, DEFAULT_DENSE_CAP),
        Err(Error::Singular(_))
    ));
}

#[test]
fn dense_cap_is_enforced() {
    let mesh = unit(2, 8, ElementKind::Simplex);
    let data = sample(FieldKind::Franke, 50, 1, 2);
    let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
    let err =
        solve_saddle_dense(&blocks, SaddleWeights::new(1.0).unwrap(), &blocks.f, 100).unwrap_err();
    assert!(matches!(err, Error::TooLarge { dim: 405, cap: 100 }));
}

#[test]
fn solve_is_deterministic() {
    let (mesh, data) = cases().remove(1);
    let blocks = SystemBlocks::assemble(&mesh, &data).unwrap();
    let op = condense(&blocks, SaddleWeights::new(1e-3).unwrap()).unwrap();
    let a = solve_reduced(&op, &blocks.f, &SolverConfig::default()).unwrap();
    let b = solve_reduced(&op, &blocks.f, &SolverConfig::default()).unwrap();
    assert_eq!(a, b);
    let again = condense(
        &SystemBlocks::assemble(&mesh, &data).unwrap(),
        SaddleWeights::new(1e-3).unwrap(),
    )
    .unwrap();
    assert_eq!(again.matrix(), op.matrix());
}

/// The stabilization weight drops out only where the gradient mismatch
/// vanishes, which is the case for affine data.
#[test]
fn stabilization_weight_consistency() {
    let mesh = unit(2, 4, ElementKind::Simplex);
    let sites = sample(FieldKind::Franke, 30, 12, 2);
    let affine: Vec<f64> = sites.points().map(|x| 1.0 + x[0] - 2.0 * x[1]).collect();
    let solve = |data: &ScatteredData, r: f64| {
        let blocks = SystemBlocks::assemble(&mesh, data).unwrap();
        let op = condense(&blocks, SaddleWeights::with_stabilization(1e-2, r).unwrap()).unwrap();
        solve_reduced(&op, &blocks.f, &tight()).unwrap().u
    };
    let lin = sites.with_values(affine).unwrap();
    let base = solve(&lin, 1.0);
    for r in [0.25, 4.0] {
        assert!(max_rel(&solve(&lin, r), &base) < 1e-9);
    }
    let curved = solve(&sites, 1.0);
    assert!(max_rel(&solve(&sites, 4.0), &curved) > 1e-6);
}
