//! Fitting, evaluation, the quasi-projection and verification norms.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_gram_diagonal, ScatteredData, SystemBlocks, Tabulation};
use crate::elements::{ElementPair, MAX_NODES};
use crate::error::{Error, Result};
use crate::fields::{FeFunction, PiecewiseField, ScalarField};
use crate::mesh::{Mesh, MeshDescription};
use crate::system::{
    condense, recover_auxiliary, solve_reduced_scaled, SaddleWeights, SolverConfig,
};

/// Quadrature degree for non-polynomial integrands in the projection.
pub const DEFAULT_PROJECTION_DEGREE: usize = 5;

/// Quadrature degree of the energy norm integrals.
pub const DEFAULT_NORM_DEGREE: usize = 2;

const FORMAT_TAG: &str = "fetps-smoother";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub alpha: f64,
    pub stabilization: f64,
}

impl FitConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let w = SaddleWeights::new(alpha)?;
        Ok(Self {
            alpha: w.alpha,
            stabilization: w.stabilization,
        })
    }

    pub fn weights(&self) -> Result<SaddleWeights> {
        SaddleWeights::with_stabilization(self.alpha, self.stabilization)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Smoother {
    mesh: Mesh,
    pair: ElementPair,
    u: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    config: FitConfig,
    diagnostics: FitDiagnostics,
}

/// Fits a smoother to `data` on `mesh`.
pub fn fit(
    data: &ScatteredData,
    mesh: &Mesh,
    cfg: FitConfig,
    solver: &SolverConfig,
) -> Result<Smoother> {
    data.check_admissible()?;
    cfg.weights()?;
    let blocks = SystemBlocks::assemble(mesh, data)?;
    fit_blocks(mesh, &blocks, cfg, solver)
}

/// Fits from pre-assembled blocks, e.g. to reuse them across `α` values.
pub fn fit_blocks(
    mesh: &Mesh,
    blocks: &SystemBlocks,
    cfg: FitConfig,
    solver: &SolverConfig,
) -> Result<Smoother> {
    let weights = cfg.weights()?;
    if blocks.n() != mesh.n_vertices() || blocks.dim != mesh.dim() {
        return Err(Error::invalid("system blocks do not belong to this mesh"));
    }
    let op = condense(blocks, weights)?;
    // The penalty vanishes on affine interpolants, so u = I_h p + w with p
    // the least-squares affine fit and S w = f − R I_h p.
    let base = affine_start(mesh, blocks).unwrap_or_else(|| vec![0.0; mesh.n_vertices()]);
    let rb = blocks.r.mul_vec(&base);
    let rhs: Vec<f64> = blocks.f.iter().zip(&rb).map(|(f, r)| f - r).collect();
    let fnorm = blocks.f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let report = solve_reduced_scaled(&op, &rhs, fnorm, solver)?;
    let u: Vec<f64> = base.iter().zip(&report.u).map(|(a, b)| a + b).collect();
    let triple = recover_auxiliary(blocks, &u, weights)?;
    Ok(Smoother {
        mesh: mesh.clone(),
        pair: ElementPair::new(mesh.shape())?,
        u: triple.u,
        sigma: triple.sigma,
        phi: triple.phi,
        config: cfg,
        diagnostics: FitDiagnostics {
            iterations: report.iterations,
            relative_residual: report.relative_residual,
        },
    })
}

impl Smoother {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.u
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    pub fn phi(&self) -> &[Vec<f64>] {
        &self.phi
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn config(&self) -> FitConfig {
        self.config
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.diagnostics
    }

    pub fn function(&self) -> FeFunction<'_> {
        FeFunction::new(&self.mesh, &self.pair, &self.u).expect("consistent smoother")
    }

    /// Component `k` of the recovered gradient as a finite element function.
    pub fn sigma_function(&self, k: usize) -> FeFunction<'_> {
        FeFunction::new(&self.mesh, &self.pair, &self.sigma[k]).expect("consistent smoother")
    }

    /// `u_h` at each point.
    pub fn evaluate(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let f = self.function();
        self.per_point(xs, |x| f.try_value(x))
    }

    /// The recovered gradient `σ_h` at each point.
    pub fn evaluate_gradient(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.mesh.dim();
        self.per_point(xs, |x| {
            let (e, _) = self.mesh.locate_point(x)?;
            (0..d)
                .map(|k| self.sigma_function(k).value_on(e, x))
                .collect()
        })
    }

    /// Elementwise `∇u_h`; on shared faces the lowest-numbered element wins.
    pub fn evaluate_raw_gradient(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.mesh.dim();
        let f = self.function();
        self.per_point(xs, |x| {
            let (e, _) = self.mesh.locate_point(x)?;
            let mut g = vec![0.0; d];
            f.gradient_on(e, x, &mut g)?;
            Ok(g)
        })
    }

    fn per_point<T: Send>(
        &self,
        xs: &[Vec<f64>],
        f: impl Fn(&[f64]) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        let d = self.mesh.dim();
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| {
                if x.len() != d {
                    return Err(Error::invalid(format!(
                        "point {i} has {} coordinates, expected {d}",
                        x.len()
                    )));
                }
                f(x).map_err(|err| match err {
                    Error::OutOfDomain { point, .. } => Error::OutOfDomain {
                        index: Some(i),
                        point,
                    },
                    other => other,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SmootherFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("smoother file: {e}")))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn file(&self) -> SmootherFile {
        SmootherFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            mesh: self.mesh.description(),
            alpha: self.config.alpha,
            stabilization: self.config.stabilization,
            u: self.u.clone(),
            sigma: self.sigma.clone(),
            phi: self.phi.clone(),
            diagnostics: self.diagnostics,
        }
    }

    fn from_file(file: SmootherFile) -> Result<Self> {
        if file.format != FORMAT_TAG {
            return Err(Error::Schema(format!(
                "unexpected format tag '{}'",
                file.format
            )));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let mesh = Mesh::from_description(&file.mesh)?;
        let config = FitConfig {
            alpha: file.alpha,
            stabilization: file.stabilization,
        };
        config.weights().map_err(|e| Error::Schema(e.to_string()))?;
        let n = mesh.n_vertices();
        let d = mesh.dim();
        let shaped = |v: &[Vec<f64>]| v.len() == d && v.iter().all(|c| c.len() == n);
        if file.u.len() != n || !shaped(&file.sigma) || !shaped(&file.phi) {
            return Err(Error::Schema(
                "coefficient arrays do not match the mesh".into(),
            ));
        }
        Ok(Self {
            pair: ElementPair::new(mesh.shape())?,
            mesh,
            u: file.u,
            sigma: file.sigma,
            phi: file.phi,
            config,
            diagnostics: file.diagnostics,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SmootherFile {
    format: String,
    version: u32,
    mesh: MeshDescription,
    alpha: f64,
    stabilization: f64,
    u: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    diagnostics: FitDiagnostics,
}

/// Nodal values of the least-squares affine fit to the data, from the normal
/// equations `(VᵀRV) c = Vᵀf` with `V` the centered, scaled affine basis at
/// the vertices. `None` when the data do not determine an affine function.
fn affine_start(mesh: &Mesh, blocks: &SystemBlocks) -> Option<Vec<f64>> {
    let d = mesh.dim();
    let n = mesh.n_vertices();
    let dom = mesh.domain();
    let basis = |v: usize, k: usize| -> f64 {
        if k == 0 {
            1.0
        } else {
            let c = 0.5 * (dom.lower()[k - 1] + dom.upper()[k - 1]);
            (mesh.vertex(v)[k - 1] - c) / dom.extent(k - 1)
        }
    };
    let cols: Vec<Vec<f64>> = (0..=d)
        .map(|k| (0..n).map(|v| basis(v, k)).collect())
        .collect();
    let rcols: Vec<Vec<f64>> = cols.iter().map(|c| blocks.r.mul_vec(c)).collect();
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gram = DMatrix::from_fn(d + 1, d + 1, |i, j| dotp(&cols[i], &rcols[j]));
    let rhs = DVector::from_fn(d + 1, |i, _| dotp(&cols[i], &blocks.f));
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(max > 0.0 && min > 1e-10 * max) {
        return None;
    }
    let coef = gram.cholesky()?.solve(&rhs);
    Some(
        (0..n)
            .map(|v| (0..=d).map(|k| coef[k] * cols[k][v]).sum())
            .collect(),
    )
}

/// `∫ μ_i v / c_i` with `v` given elementwise as `v(e, x)`.
fn project_elementwise<F>(mesh: &Mesh, degree: usize, v: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let tab = Tabulation::new(mesh, degree)?;
    let gram = assemble_gram_diagonal(mesh)?;
    let n = mesh.nodes_per_element();
    let d = mesh.dim();
    let locals: Vec<(Vec<usize>, [f64; MAX_NODES])> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let ev = tab.element(mesh, e)?;
            let mut acc = [0.0; MAX_NODES];
            for q in &ev.points {
                let val = v(e, &q.x[..d]);
                for a in 0..n {
                    acc[a] += q.weight * q.mu[a] * val;
                }
            }
            Ok((ev.nodes, acc))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; mesh.n_vertices()];
    for (nodes, acc) in locals {
        for (a, &j) in nodes.iter().enumerate() {
            out[j] += acc[a];
        }
    }
    for (o, c) in out.iter_mut().zip(&gram) {
        *o /= c;
    }
    Ok(out)
}

/// Coefficients of `Q_h v`, integrating with the default degree.
pub fn quasi_project<F: ScalarField + ?Sized>(mesh: &Mesh, v: &F) -> Result<Vec<f64>> {
    quasi_project_with_degree(mesh, v, DEFAULT_PROJECTION_DEGREE)
}

pub fn quasi_project_with_degree<F: ScalarField + ?Sized>(
    mesh: &Mesh,
    v: &F,
    degree: usize,
) -> Result<Vec<f64>> {
    project_elementwise(mesh, degree, |_, x| v.value(x))
}

/// `Q_h` applied to a field that is only piecewise smooth.
pub fn quasi_project_piecewise<F: PiecewiseField + ?Sized>(
    mesh: &Mesh,
    v: &F,
    degree: usize,
) -> Result<Vec<f64>> {
    let centroids = element_centroids(mesh)?;
    project_elementwise(mesh, degree, |e, x| v.value_in(x, &centroids[e]))
}

/// `Q_h ∇v_h` for `v_h ∈ S_h`, computed by integrating the elementwise
/// gradient against the dual basis.
pub fn recover_gradient(mesh: &Mesh, coeffs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let pair = ElementPair::new(mesh.shape())?;
    let f = FeFunction::new(mesh, &pair, coeffs)?;
    let d = mesh.dim();
    (0..d)
        .map(|k| {
            project_elementwise(mesh, 2, |e, x| {
                let mut g = [0.0; 3];
                f.gradient_on(e, x, &mut g[..d]).expect("valid element");
                g[k]
            })
        })
        .collect()
}

/// Nodal interpolant `I_h v`.
pub fn lagrange_interpolate<F: ScalarField + ?Sized>(mesh: &Mesh, v: &F) -> Vec<f64> {
    (0..mesh.n_vertices())
        .map(|i| v.value(mesh.vertex(i)))
        .collect()
}

pub(crate) fn element_centroids(mesh: &Mesh) -> Result<Vec<Vec<f64>>> {
    Ok((0..mesh.n_elements())
        .map(|e| element_centroid(mesh, e))
        .collect())
}

/// `Σ_T ∫_T g(e, x)` by quadrature of the given degree.
pub fn integrate<F>(mesh: &Mesh, degree: usize, g: F) -> Result<f64>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let tab = Tabulation::new(mesh, degree)?;
    let d = mesh.dim();
    let parts: Vec<f64> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let ev = tab.element(mesh, e)?;
            Ok(ev.points.iter().map(|q| q.weight * g(e, &q.x[..d])).sum())
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// `‖v‖_{L²}` of a piecewise field over the mesh.
pub fn l2_norm<F: PiecewiseField + ?Sized>(mesh: &Mesh, v: &F, degree: usize) -> Result<f64> {
    let centroids = element_centroids(mesh)?;
    Ok(integrate(mesh, degree, |e, x| v.value_in(x, &centroids[e]).powi(2))?.sqrt())
}

/// Broken `|v|_{H¹}` of a piecewise field over the mesh.
pub fn h1_seminorm<F: PiecewiseField + ?Sized>(mesh: &Mesh, v: &F, degree: usize) -> Result<f64> {
    let centroids = element_centroids(mesh)?;
    let d = mesh.dim();
    Ok(integrate(mesh, degree, |e, x| {
        let mut g = [0.0; 3];
        v.gradient_in(x, &centroids[e], &mut g[..d]);
        g[..d].iter().map(|c| c * c).sum()
    })?
    .sqrt())
}

/// The three squared parts of the energy norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    /// `‖Pu‖²`
    pub data: f64,
    /// `α |σ|²_{H¹}`
    pub smoothness: f64,
    /// `‖σ − ∇u‖²_{L²}`
    pub constraint: f64,
}

impl EnergyParts {
    pub fn norm(&self) -> f64 {
        (self.data + self.smoothness + self.constraint).sqrt()
    }
}

/// `‖(u, σ)‖_A` with broken quadrature of the default degree over `mesh`.
pub fn energy_norm(
    mesh: &Mesh,
    sites: &ScatteredData,
    alpha: f64,
    u: &dyn PiecewiseField,
    sigma: &[&dyn PiecewiseField],
) -> Result<f64> {
    Ok(energy_parts(mesh, sites, alpha, u, sigma, DEFAULT_NORM_DEGREE)?.norm())
}

pub fn energy_parts(
    mesh: &Mesh,
    sites: &ScatteredData,
    alpha: f64,
    u: &dyn PiecewiseField,
    sigma: &[&dyn PiecewiseField],
    degree: usize,
) -> Result<EnergyParts> {
    let d = mesh.dim();
    if sigma.len() != d || sites.dim() != d {
        return Err(Error::invalid(format!(
            "energy norm needs {d} gradient components in {d} dimensions"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "smoothing parameter must be positive, got {alpha}"
        )));
    }
    let data = (0..sites.len())
        .into_par_iter()
        .map(|i| {
            let x = sites.point(i);
            let (e, _) = mesh.locate_point(x).map_err(|err| match err {
                Error::OutOfDomain { point, .. } => Error::OutOfDomain {
                    index: Some(i),
                    point,
                },
                other => other,
            })?;
            let anchor = element_centroid(mesh, e);
            Ok(u.value_in(x, &anchor).powi(2))
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    let centroids = element_centroids(mesh)?;
    let smooth = integrate(mesh, degree, |e, x| {
        let mut total = 0.0;
        let mut g = [0.0; 3];
        for s in sigma {
            s.gradient_in(x, &centroids[e], &mut g[..d]);
            total += g[..d].iter().map(|c| c * c).sum::<f64>();
        }
        total
    })?;
    let constraint = integrate(mesh, degree, |e, x| {
        let mut g = [0.0; 3];
        u.gradient_in(x, &centroids[e], &mut g[..d]);
        sigma
            .iter()
            .zip(&g)
            .map(|(s, gk)| (s.value_in(x, &centroids[e]) - gk).powi(2))
            .sum()
    })?;
    Ok(EnergyParts {
        data,
        smoothness: alpha * smooth,
        constraint,
    })
}

pub(crate) fn element_centroid(mesh: &Mesh, e: usize) -> Vec<f64> {
    let nodes = mesh.element(e);
    let mut c = vec![0.0; mesh.dim()];
    for &v in nodes {
        for (ck, xk) in c.iter_mut().zip(mesh.vertex(v)) {
            *ck += xk / nodes.len() as f64;
        }
    }
    c
}

/// `J_α(v) = ‖Pv‖² + α‖∇Q_h∇v‖² + ‖Q_h∇v − ∇v‖² − 2(Pv)ᵀz` for the
/// finite element function with coefficients `coeffs`.
pub fn functional_at(mesh: &Mesh, data: &ScatteredData, alpha: f64, coeffs: &[f64]) -> Result<f64> {
    let pair = ElementPair::new(mesh.shape())?;
    let v = FeFunction::new(mesh, &pair, coeffs)?;
    let d = mesh.dim();
    let mut pv = 0.0;
    let mut cross = 0.0;
    for (i, z) in data.values().iter().enumerate() {
        let val = v.try_value(data.point(i))?;
        pv += val * val;
        cross += val * z;
    }
    let recovered = recover_gradient(mesh, coeffs)?;
    let sig: Vec<FeFunction> = recovered
        .iter()
        .map(|c| FeFunction::new(mesh, &pair, c))
        .collect::<Result<_>>()?;
    let terms = integrate(mesh, 2, |e, x| {
        let mut gv = [0.0; 3];
        let mut gs = [0.0; 3];
        v.gradient_on(e, x, &mut gv[..d]).expect("valid element");
        let mut total = 0.0;
        for (k, s) in sig.iter().enumerate() {
            s.gradient_on(e, x, &mut gs[..d]).expect("valid element");
            total += alpha * gs[..d].iter().map(|c| c * c).sum::<f64>();
            let sk = s.value_on(e, x).expect("valid element");
            total += (sk - gv[k]).powi(2);
        }
        total
    })?;
    Ok(pv + terms - 2.0 * cross)
}

/// `J_α(u_h)` of a fitted smoother.
pub fn functional_value(s: &Smoother, data: &ScatteredData) -> Result<f64> {
    functional_at(s.mesh(), data, s.alpha(), s.coefficients())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::ElementKind;
    use crate::fields::{Affine, Constant};
    use crate::mesh::Domain;

    fn unit_mesh(n: usize, kind: ElementKind) -> Mesh {
        Mesh::structured(Domain::unit(2).unwrap(), &[n, n], kind).unwrap()
    }

    #[test]
    fn energy_norm_of_unit_gradient() {
        let mesh = unit_mesh(2, ElementKind::Simplex);
        let sites = ScatteredData::from_points(&[vec![0.2, 0.3]], vec![0.0]).unwrap();
        let zero = Constant(0.0);
        let one = Constant(1.0);
        let e = energy_norm(&mesh, &sites, 1.0, &zero, &[&one, &zero]).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        assert_eq!(
            energy_norm(&mesh, &sites, 1.0, &zero, &[&zero, &zero]).unwrap(),
            0.0
        );
    }

    #[test]
    fn interpolation_of_coordinates() {
        let mesh = unit_mesh(3, ElementKind::Parallelotope);
        let x = lagrange_interpolate(&mesh, &|p: &[f64]| p[0]);
        for (i, xi) in x.iter().enumerate() {
            assert_eq!(*xi, mesh.vertex(i)[0]);
        }
        assert!(lagrange_interpolate(&mesh, &Constant(2.5))
            .iter()
            .all(|&v| v == 2.5));
    }

    #[test]
    fn projection_reproduces_affine() {
        for kind in [ElementKind::Simplex, ElementKind::Parallelotope] {
            let mesh = unit_mesh(4, kind);
            let l = Affine {
                constant: 0.5,
                gradient: vec![1.5, -2.0],
            };
            let q = quasi_project(&mesh, &l).unwrap();
            let i = lagrange_interpolate(&mesh, &l);
            for (a, b) in q.iter().zip(&i) {
                assert!((a - b).abs() < 1e-12);
            }
            let g = recover_gradient(&mesh, &i).unwrap();
            assert!(g[0].iter().all(|v| (v - 1.5).abs() < 1e-12));
            assert!(g[1].iter().all(|v| (v + 2.0).abs() < 1e-12));
        }
    }

    #[test]
    fn smoother_json_rejects_garbage() {
        assert!(matches!(Smoother::from_json("{}"), Err(Error::Schema(_))));
        assert!(matches!(
            Smoother::from_json("not json"),
            Err(Error::Schema(_))
        ));
    }
}
