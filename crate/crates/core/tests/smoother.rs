#![allow(clippy::needless_range_loop)]

use fetps::assembly::evaluation_matrix;
use fetps::fields::{Affine, Constant, Difference};
use fetps::io::{synthesize, SynthConfig, SynthLayout};
use fetps::smoother::{
    energy_norm, integrate, l2_norm, quasi_project_piecewise, quasi_project_with_degree,
    recover_gradient,
};
use fetps::{
    fit, functional_value, lagrange_interpolate, quasi_project, Domain, ElementKind, ElementPair,
    Error, FeFunction, FieldKind, FitConfig, Mesh, PiecewiseField, ScalarField, ScatteredData,
    Smoother, SolverConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(dim: usize, n: usize, kind: ElementKind) -> Mesh {
    Mesh::structured(Domain::unit(dim).unwrap(), &vec![n; dim], kind).unwrap()
}

fn sites(n: usize, seed: u64, dim: usize) -> ScatteredData {
    synthesize(&SynthConfig {
        field: FieldKind::Franke,
        n,
        seed,
        domain: Domain::unit(dim).unwrap(),
        noise: 0.0,
        layout: SynthLayout::Uniform,
    })
    .unwrap()
}

fn families() -> Vec<Mesh> {
    vec![
        unit(2, 5, ElementKind::Simplex),
        unit(2, 5, ElementKind::Parallelotope),
        unit(3, 2, ElementKind::Simplex),
        unit(3, 2, ElementKind::Parallelotope),
    ]
}

fn default_fit(data: &ScatteredData, mesh: &Mesh, alpha: f64) -> Smoother {
    fit(
        data,
        mesh,
        FitConfig::new(alpha).unwrap(),
        &SolverConfig::default(),
    )
    .unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

#[test]
fn constant_data_is_fitted_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mesh in families() {
        let d = mesh.dim();
        let data = sites(30, 2, d).with_values(vec![2.5; 30]).unwrap();
        for alpha in [1e-4, 1.0] {
            let s = default_fit(&data, &mesh, alpha);
            assert!(s.coefficients().iter().all(|u| (u - 2.5).abs() < 1e-8));
            let xs = random_points(&mut rng, 20, d);
            assert!(s
                .evaluate(&xs)
                .unwrap()
                .iter()
                .all(|v| (v - 2.5).abs() < 1e-8));
            assert!(s
                .evaluate_gradient(&xs)
                .unwrap()
                .iter()
                .flatten()
                .all(|g| g.abs() < 1e-8));
        }
    }
}

#[test]
fn linear_data_is_reproduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mesh in families() {
        let d = mesh.dim();
        let l = Affine {
            constant: 0.7,
            gradient: (0..d).map(|k| 1.0 - 0.6 * k as f64).collect(),
        };
        let data = sites(40, 3, d);
        let z: Vec<f64> = data.points().map(|x| l.value(x)).collect();
        let data = data.with_values(z).unwrap();
        let interp = lagrange_interpolate(&mesh, &l);
        for alpha in [1e-3, 1.0, 1e3] {
            let s = default_fit(&data, &mesh, alpha);
            for (u, i) in s.coefficients().iter().zip(&interp) {
                assert!((u - i).abs() < 1e-8);
            }
            let xs = random_points(&mut rng, 20, d);
            for g in s.evaluate_gradient(&xs).unwrap() {
                for k in 0..d {
                    assert!((g[k] - l.gradient[k]).abs() < 1e-8);
                }
            }
            let grads: Vec<Constant> = l.gradient.iter().map(|&c| Constant(c)).collect();
            let sig: Vec<FeFunction> = (0..d).map(|k| s.sigma_function(k)).collect();
            let errs: Vec<Difference> = (0..d)
                .map(|k| Difference {
                    a: &sig[k],
                    b: &grads[k],
                })
                .collect();
            let fun = s.function();
            let u_err = Difference { a: &fun, b: &l };
            let refs: Vec<&dyn PiecewiseField> =
                errs.iter().map(|e| e as &dyn PiecewiseField).collect();
            assert!(energy_norm(&mesh, &data, alpha, &u_err, &refs).unwrap() < 1e-7);
        }
    }
}

/// Independent least-squares affine fit by QR.
fn affine_least_squares(data: &ScatteredData) -> Vec<f64> {
    let d = data.dim();
    let a = DMatrix::from_fn(data.len(), d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            data.point(i)[j - 1]
        }
    });
    let z = DVector::from_column_slice(data.values());
    let qr = a.qr();
    let rhs = qr.q().transpose() * z;
    qr.r()
        .solve_upper_triangular(&rhs)
        .unwrap()
        .iter()
        .copied()
        .collect()
}

#[test]
fn large_smoothing_tends_to_affine_least_squares() {
    let mesh = unit(2, 6, ElementKind::Simplex);
    let data = sites(50, 7, 2);
    let c = affine_least_squares(&data);
    let p = |x: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1];
    let target = lagrange_interpolate(&mesh, &p);
    let dev = |alpha: f64| {
        let s = default_fit(&data, &mesh, alpha);
        s.coefficients()
            .iter()
            .zip(&target)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    let (d4, d6) = (dev(1e4), dev(1e6));
    assert!(d6 < 1e-4, "deviation at α = 1e6: {d6:e}");
    assert!(d6 < d4 / 10.0);
}

#[test]
fn evaluation_paths_agree() {
    for mesh in families() {
        let data = sites(60, 4, mesh.dim());
        let s = default_fit(&data, &mesh, 1e-2);
        let verts: Vec<Vec<f64>> = (0..mesh.n_vertices())
            .map(|v| mesh.vertex(v).to_vec())
            .collect();
        let at_verts = s.evaluate(&verts).unwrap();
        for (a, b) in at_verts.iter().zip(s.coefficients()) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = evaluation_matrix(&mesh, &data).unwrap();
        let pu = p.mul_vec(s.coefficients());
        let pts: Vec<Vec<f64>> = data.points().map(<[f64]>::to_vec).collect();
        for (a, b) in s.evaluate(&pts).unwrap().iter().zip(&pu) {
            assert!((a - b).abs() < 1e-12);
        }
        let err = s
            .evaluate(&[vec![0.5; mesh.dim()], vec![1.5; mesh.dim()]])
            .unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { index: Some(1), .. }));
    }
}

#[test]
fn recovered_gradient_is_continuous_across_faces() {
    let mesh = unit(2, 4, ElementKind::Simplex);
    let data = sites(40, 5, 2);
    let s = default_fit(&data, &mesh, 1e-2);
    let mut checked = 0;
    for e in 0..mesh.n_elements() {
        for o in mesh.element_patch(e).unwrap().members {
            let shared: Vec<usize> = mesh
                .element(e)
                .iter()
                .copied()
                .filter(|v| mesh.element(o).contains(v))
                .collect();
            if o == e || shared.len() != 2 {
                continue;
            }
            let mid: Vec<f64> = (0..2)
                .map(|k| 0.5 * (mesh.vertex(shared[0])[k] + mesh.vertex(shared[1])[k]))
                .collect();
            for k in 0..2 {
                let f = s.sigma_function(k);
                let (a, b) = (f.value_on(e, &mid).unwrap(), f.value_on(o, &mid).unwrap());
                assert!((a - b).abs() < 1e-12);
            }
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn projection_of_linears_is_interpolation() {
    let mesh = unit(2, 5, ElementKind::Simplex);
    let l = |x: &[f64]| 3.0 - x[0] + 0.25 * x[1];
    let q = quasi_project(&mesh, &l).unwrap();
    for (a, b) in q.iter().zip(lagrange_interpolate(&mesh, &l)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(
        lagrange_interpolate(&mesh, &|_: &[f64]| 4.0),
        vec![4.0; mesh.n_vertices()]
    );
    let xs = lagrange_interpolate(&mesh, &|x: &[f64]| x[0]);
    assert!((0..mesh.n_vertices()).all(|v| xs[v] == mesh.vertex(v)[0]));
}

/// Adds `bump` to the field on every element outside `keep`.
struct Perturbed<'a, F> {
    mesh: &'a Mesh,
    base: F,
    keep: Vec<usize>,
}

impl<F: Fn(&[f64]) -> f64 + Sync> PiecewiseField for Perturbed<'_, F> {
    fn value_in(&self, x: &[f64], anchor: &[f64]) -> f64 {
        let (e, _) = self.mesh.locate_point(anchor).unwrap();
        let bump = if self.keep.contains(&e) {
            0.0
        } else {
            10.0 + x[0]
        };
        (self.base)(x) + bump
    }

    fn gradient_in(&self, _x: &[f64], _anchor: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[test]
fn projection_is_local() {
    let mesh = unit(2, 6, ElementKind::Simplex);
    let v = |x: &[f64]| (x[0] * 3.0).sin() + x[1] * x[1];
    let base = quasi_project(&mesh, &v).unwrap();
    for t in [0, 17, 40] {
        let patch = mesh.element_patch(t).unwrap().members;
        let perturbed = Perturbed {
            mesh: &mesh,
            base: v,
            keep: patch,
        };
        let q = quasi_project_piecewise(&mesh, &perturbed, 5).unwrap();
        for &node in mesh.element(t) {
            assert!((q[node] - base[node]).abs() < 1e-13);
        }
        assert!(q.iter().zip(&base).any(|(a, b)| (a - b).abs() > 1.0));
    }
}

#[test]
fn quadratic_gradients_are_reproduced() {
    for mesh in [
        unit(2, 4, ElementKind::Simplex),
        unit(3, 2, ElementKind::Simplex),
    ] {
        let d = mesh.dim();
        let pair = ElementPair::new(mesh.shape()).unwrap();
        // q = x² + xy - y² (+ 2z² - yz)
        let grad = |x: &[f64], k: usize| match (d, k) {
            (_, 0) => 2.0 * x[0] + x[1],
            (2, 1) => x[0] - 2.0 * x[1],
            (_, 1) => x[0] - 2.0 * x[1] - x[2],
            _ => 4.0 * x[2] - x[1],
        };
        for k in 0..d {
            let coeffs = quasi_project(&mesh, &|x: &[f64]| grad(x, k)).unwrap();
            let f = FeFunction::new(&mesh, &pair, &coeffs).unwrap();
            let worst = integrate(&mesh, 5, |e, x| {
                let diff = (f.value_on(e, x).unwrap() - grad(x, k)).abs();
                assert!(diff < 1e-11, "component {k}: {diff:e}");
                0.0
            });
            worst.unwrap();
        }
    }
}

#[test]
fn projection_is_stable_in_l2() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for mesh in families() {
        let pair = ElementPair::new(mesh.shape()).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let vals: Vec<f64> = (0..mesh.n_elements())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let pw = |e: usize, _: &[f64]| vals[e];
            let q = fetps::smoother::integrate(&mesh, 2, |e, x| pw(e, x).powi(2))
                .unwrap()
                .sqrt();
            let field = PiecewiseConstant {
                mesh: &mesh,
                values: &vals,
            };
            let coeffs = quasi_project_piecewise(&mesh, &field, 2).unwrap();
            let proj = FeFunction::new(&mesh, &pair, &coeffs).unwrap();
            worst = worst.max(l2_norm(&mesh, &proj, 2).unwrap() / q);
        }
        assert!(worst <= 5.0, "{}: ratio {worst}", mesh.kind());
    }
}

struct PiecewiseConstant<'a> {
    mesh: &'a Mesh,
    values: &'a [f64],
}

impl PiecewiseField for PiecewiseConstant<'_> {
    fn value_in(&self, _x: &[f64], anchor: &[f64]) -> f64 {
        self.values[self.mesh.locate_point(anchor).unwrap().0]
    }

    fn gradient_in(&self, _x: &[f64], _anchor: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[test]
fn recovered_gradient_is_locally_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mesh = unit(2, 6, ElementKind::Simplex);
    let pair = ElementPair::new(mesh.shape()).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u: Vec<f64> = (0..mesh.n_vertices())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let f = FeFunction::new(&mesh, &pair, &u).unwrap();
        let sigma = recover_gradient(&mesh, &u).unwrap();
        let grad_norm = |e: usize| {
            let nodes = mesh.element(e);
            let c: Vec<f64> = (0..2)
                .map(|k| nodes.iter().map(|&v| mesh.vertex(v)[k]).sum::<f64>() / 3.0)
                .collect();
            let mut g = [0.0; 2];
            f.gradient_on(e, &c, &mut g).unwrap();
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        for t in 0..mesh.n_elements() {
            // σ_h is linear on T, so its maximum is attained at a vertex.
            let sig_max = mesh
                .element(t)
                .iter()
                .map(|&v| (sigma[0][v].powi(2) + sigma[1][v].powi(2)).sqrt())
                .fold(0.0, f64::max);
            let patch_max = mesh
                .element_patch(t)
                .unwrap()
                .members
                .iter()
                .map(|&e| grad_norm(e))
                .fold(0.0, f64::max);
            worst = worst.max(sig_max / patch_max);
        }
    }
    assert!(worst <= 5.0, "ratio {worst}");
}

#[test]
fn interpolation_error_is_second_order() {
    let v = |x: &[f64]| (2.0 * x[0]).exp() * (std::f64::consts::PI * x[1]).sin();
    let mut errs = Vec::new();
    for n in [4, 8, 16, 32] {
        let mesh = unit(2, n, ElementKind::Simplex);
        let pair = ElementPair::new(mesh.shape()).unwrap();
        let c = lagrange_interpolate(&mesh, &v);
        let f = FeFunction::new(&mesh, &pair, &c).unwrap();
        let e2 = integrate(&mesh, 6, |e, x| (f.value_on(e, x).unwrap() - v(x)).powi(2)).unwrap();
        errs.push(e2.sqrt());
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&order), "{errs:?}");
    }
}

#[test]
fn functional_minimality_and_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mesh = unit(2, 5, ElementKind::Simplex);
    let data = sites(40, 11, 2);
    let s = default_fit(&data, &mesh, 1e-2);
    let j = functional_value(&s, &data).unwrap();
    let f_u: f64 = evaluation_matrix(&mesh, &data)
        .unwrap()
        .mul_vec(s.coefficients())
        .iter()
        .zip(data.values())
        .map(|(a, b)| a * b)
        .sum();
    assert!((j + f_u).abs() <= 1e-8 * f_u.abs());
    for _ in 0..20 {
        let v: Vec<f64> = s
            .coefficients()
            .iter()
            .map(|u| u + rng.random_range(-0.05..0.05))
            .collect();
        assert!(fetps::smoother::functional_at(&mesh, &data, s.alpha(), &v).unwrap() >= j);
    }
    let zero = data.with_values(vec![0.0; data.len()]).unwrap();
    let s0 = default_fit(&zero, &mesh, 1e-2);
    assert!(s0.coefficients().iter().all(|&u| u == 0.0));
    assert_eq!(functional_value(&s0, &zero).unwrap(), 0.0);
}

#[test]
fn persistence_round_trip() {
    let dir = std::env::temp_dir().join(format!("fetps-smoother-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    for mesh in families() {
        let data = sites(30, 12, mesh.dim());
        let s = default_fit(&data, &mesh, 0.1);
        s.save(&path).unwrap();
        let back = Smoother::load(&path).unwrap();
        assert_eq!(back.coefficients(), s.coefficients());
        assert_eq!(back.sigma(), s.sigma());
        assert_eq!(back.phi(), s.phi());
        assert_eq!(back.alpha(), s.alpha());
        assert_eq!(back.diagnostics(), s.diagnostics());
        assert_eq!(back.to_json().unwrap(), s.to_json().unwrap());
    }
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["version"] = serde_json::json!(99);
    assert!(matches!(
        Smoother::from_json(&doc.to_string()),
        Err(Error::Schema(_))
    ));
    doc["version"] = serde_json::json!(1);
    doc["u"] = serde_json::json!([1.0, 2.0]);
    assert!(matches!(
        Smoother::from_json(&doc.to_string()),
        Err(Error::Schema(_))
    ));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn fit_errors_propagate() {
    let mesh = unit(2, 3, ElementKind::Simplex);
    let pts = vec![vec![0.1, 0.1], vec![0.9, 0.2], vec![0.4, 1.2]];
    let outside = ScatteredData::from_points(&pts, vec![1.0; 3]).unwrap();
    let err = fit(
        &outside,
        &mesh,
        FitConfig::new(1.0).unwrap(),
        &SolverConfig::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::OutOfDomain { index: Some(2), .. }),
        "{err}"
    );
    assert!(matches!(
        FitConfig::new(0.0),
        Err(Error::InvalidArgument(_))
    ));
    let collinear = ScatteredData::from_points(
        &[vec![0.1, 0.1], vec![0.5, 0.5], vec![0.9, 0.9]],
        vec![1.0; 3],
    )
    .unwrap();
    let err = fit(
        &collinear,
        &mesh,
        FitConfig::new(1.0).unwrap(),
        &SolverConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InadmissibleData(_)));
    let data = sites(30, 1, 2);
    let starved = SolverConfig {
        max_iterations: Some(1),
        ..SolverConfig::default()
    };
    let err = fit(
        &data,
        &unit(2, 8, ElementKind::Simplex),
        FitConfig::new(1e-3).unwrap(),
        &starved,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoConvergence { iterations: 1, .. }));
}

#[test]
fn smoother_is_shareable_across_threads() {
    let mesh = unit(2, 4, ElementKind::Simplex);
    let data = sites(30, 13, 2);
    let s = default_fit(&data, &mesh, 1e-2);
    let xs = vec![vec![0.3, 0.6], vec![0.9, 0.1]];
    let expect = s.evaluate(&xs).unwrap();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4)
            .map(|_| scope.spawn(|| s.evaluate(&xs).unwrap()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expect);
        }
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_fixes_finite_element_functions(which in 0usize..4, seed in any::<u64>()) {
        let mesh = &families()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = ElementPair::new(mesh.shape()).unwrap();
        let c: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FeFunction::new(mesh, &pair, &c).unwrap();
        let q = quasi_project_piecewise(mesh, &f, 2).unwrap();
        for (a, b) in q.iter().zip(&c) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_degree_is_irrelevant_for_linears(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mesh = unit(2, 3, ElementKind::Simplex);
        let l = move |x: &[f64]| a * x[0] + b * x[1];
        let low = quasi_project_with_degree(&mesh, &l, 2).unwrap();
        let high = quasi_project_with_degree(&mesh, &l, 8).unwrap();
        for (x, y) in low.iter().zip(&high) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
