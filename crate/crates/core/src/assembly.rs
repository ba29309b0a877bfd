//! Sparse blocks of the mixed saddle-point system and the data term.
//!
//! Index conventions: row `i` is the test function, column `j` the trial
//! function. With `φ` the nodal basis and `μ` its dual,
//!
//! * `K_ij = ∫ ∇φ_j·∇φ_i`, `M_ij = ∫ φ_j φ_i`
//! * `B^k_ij = ∫ ∂_k φ_j μ_i`, `W^k_ij = ∫ ∂_k φ_j φ_i`
//! * `D = diag(c)`, `c_j = ∫ μ_j φ_j`
//! * `P_ij = φ_j(x_i)`, `R = PᵀP`, `f = Pᵀz`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elements::{ElementPair, MAX_NODES};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::{quadrature, QuadratureRule};
use crate::sparse::CsrMatrix;

/// Off-diagonal Gram entries must stay below this fraction of `max c_j`.
pub const GRAM_OFFDIAG_TOL: f64 = 1e-13;

/// Relative eigenvalue floor for the affine-independence test on data sites.
const AFFINE_RANK_TOL: f64 = 1e-12;

/// Measurement sites and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteredData {
    dim: usize,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl ScatteredData {
    /// `points` is flat with stride `dim`.
    pub fn new(dim: usize, points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::invalid(format!(
                "data dimension must be 2 or 3, got {dim}"
            )));
        }
        if points.len() != dim * values.len() {
            return Err(Error::invalid(format!(
                "{} coordinates do not match {} values in dimension {dim}",
                points.len(),
                values.len()
            )));
        }
        if let Some(i) = points.iter().chain(&values).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at flat position {i}"
            )));
        }
        Ok(Self {
            dim,
            points,
            values,
        })
    }

    pub fn from_points(points: &[Vec<f64>], values: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(2);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("all points must have the same dimension"));
        }
        Self::new(dim, points.concat(), values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.points.clone(), values)
    }

    /// True if the sites contain `dim + 1` affinely independent points
    /// (three non-collinear points in 2D, four non-coplanar in 3D).
    pub fn is_affinely_spanning(&self) -> bool {
        let n = self.len();
        if n < self.dim + 1 {
            return false;
        }
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for p in self.points() {
            for k in 0..d {
                mean[k] += p[k] / n as f64;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in self.points() {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        let eig = SymmetricEigen::new(cov).eigenvalues;
        let max = eig.iter().fold(0.0f64, |m: f64, v: &f64| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        max > 0.0 && min > AFFINE_RANK_TOL * max
    }

    pub fn check_admissible(&self) -> Result<()> {
        if self.is_affinely_spanning() {
            Ok(())
        } else {
            Err(Error::InadmissibleData(format!(
                "need at least {} affinely independent data sites in dimension {}",
                self.dim + 1,
                self.dim
            )))
        }
    }
}

/// Quadrature-point data on one physical element.
pub(crate) struct ElementValues {
    pub nodes: Vec<usize>,
    pub points: Vec<QuadPoint>,
}

pub(crate) struct QuadPoint {
    pub weight: f64,
    pub x: [f64; 3],
    pub phi: [f64; MAX_NODES],
    pub mu: [f64; MAX_NODES],
    pub grad: [[f64; 3]; MAX_NODES],
}

/// Reference tabulation of basis, dual and gradients at quadrature points.
pub(crate) struct Tabulation {
    pub rule: QuadratureRule,
    phi: Vec<[f64; MAX_NODES]>,
    mu: Vec<[f64; MAX_NODES]>,
    dphi: Vec<[[f64; 3]; MAX_NODES]>,
}

impl Tabulation {
    pub fn new(mesh: &Mesh, degree: usize) -> Result<Self> {
        let pair = ElementPair::new(mesh.shape())?;
        let rule = quadrature(mesh.shape(), degree)?;
        let mut phi = Vec::with_capacity(rule.len());
        let mut mu = Vec::with_capacity(rule.len());
        let mut dphi = Vec::with_capacity(rule.len());
        for (xi, _) in rule.iter() {
            let mut p = [0.0; MAX_NODES];
            let mut m = [0.0; MAX_NODES];
            let mut g = [[0.0; 3]; MAX_NODES];
            pair.nodal_values(xi, &mut p);
            pair.dual_values(xi, &mut m);
            pair.nodal_gradients(xi, &mut g);
            phi.push(p);
            mu.push(m);
            dphi.push(g);
        }
        Ok(Self {
            rule,
            phi,
            mu,
            dphi,
        })
    }

    pub fn element(&self, mesh: &Mesh, e: usize) -> Result<ElementValues> {
        let map = mesh.element_map(e)?;
        let n = mesh.nodes_per_element();
        let points = self
            .rule
            .iter()
            .enumerate()
            .map(|(q, (xi, w))| {
                let mut grad = [[0.0; 3]; MAX_NODES];
                for i in 0..n {
                    grad[i] = map.push_gradient(&self.dphi[q][i]);
                }
                QuadPoint {
                    weight: w * map.det(),
                    x: map.to_physical(xi),
                    phi: self.phi[q],
                    mu: self.mu[q],
                    grad,
                }
            })
            .collect();
        Ok(ElementValues {
            nodes: mesh.element(e).to_vec(),
            points,
        })
    }
}

/// Element loop producing triplets in element order; `local` fills the
/// row-major `n_loc × n_loc` element matrix (row = test, column = trial).
fn assemble_square<F>(mesh: &Mesh, local: F) -> Result<CsrMatrix>
where
    F: Fn(&ElementValues, &mut [f64]) + Sync,
{
    let tab = Tabulation::new(mesh, 2)?;
    let n = mesh.nodes_per_element();
    let chunks: Vec<Vec<(usize, usize, f64)>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let ev = tab.element(mesh, e)?;
            let mut m = vec![0.0; n * n];
            local(&ev, &mut m);
            let mut out = Vec::with_capacity(n * n);
            for a in 0..n {
                for b in 0..n {
                    out.push((ev.nodes[a], ev.nodes[b], m[a * n + b]));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let triplets: Vec<_> = chunks.into_iter().flatten().collect();
    CsrMatrix::from_triplets(mesh.n_vertices(), mesh.n_vertices(), &triplets)
}

pub fn assemble_stiffness(mesh: &Mesh) -> Result<CsrMatrix> {
    let n = mesh.nodes_per_element();
    let d = mesh.dim();
    assemble_square(mesh, |ev, m| {
        for q in &ev.points {
            for a in 0..n {
                for b in 0..n {
                    let g: f64 = (0..d).map(|k| q.grad[a][k] * q.grad[b][k]).sum();
                    m[a * n + b] += q.weight * g;
                }
            }
        }
    })
}

/// Scalar mass matrix of the nodal basis.
pub fn assemble_mass(mesh: &Mesh) -> Result<CsrMatrix> {
    let n = mesh.nodes_per_element();
    assemble_square(mesh, |ev, m| {
        for q in &ev.points {
            for a in 0..n {
                for b in 0..n {
                    m[a * n + b] += q.weight * q.phi[a] * q.phi[b];
                }
            }
        }
    })
}

/// Full Gram matrix `G_ij = ∫ φ_j μ_i`; diagonal up to roundoff.
pub fn assemble_gram(mesh: &Mesh) -> Result<CsrMatrix> {
    let n = mesh.nodes_per_element();
    assemble_square(mesh, |ev, m| {
        for q in &ev.points {
            for a in 0..n {
                for b in 0..n {
                    m[a * n + b] += q.weight * q.mu[a] * q.phi[b];
                }
            }
        }
    })
}

/// Diagonal `c_j` of the Gram matrix. Element Gram blocks are checked for
/// diagonality on the way.
pub fn assemble_gram_diagonal(mesh: &Mesh) -> Result<Vec<f64>> {
    let tab = Tabulation::new(mesh, 2)?;
    let n = mesh.nodes_per_element();
    let locals: Vec<(Vec<usize>, Vec<f64>, f64)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let ev = tab.element(mesh, e)?;
            let mut diag = vec![0.0; n];
            let mut off = vec![0.0; n * n];
            for q in &ev.points {
                for a in 0..n {
                    for b in 0..n {
                        let v = q.weight * q.mu[a] * q.phi[b];
                        if a == b {
                            diag[a] += v;
                        } else {
                            off[a * n + b] += v;
                        }
                    }
                }
            }
            let max_off = off.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Ok((ev.nodes, diag, max_off))
        })
        .collect::<Result<_>>()?;
    let mut c = vec![0.0; mesh.n_vertices()];
    let mut max_off = 0.0f64;
    for (nodes, diag, off) in locals {
        for (node, v) in nodes.iter().zip(diag) {
            c[*node] += v;
        }
        max_off = max_off.max(off);
    }
    let max_c = c.iter().fold(0.0f64, |m, &v| m.max(v));
    if max_off > GRAM_OFFDIAG_TOL * max_c {
        return Err(Error::Consistency(format!(
            "dual basis is not biorthogonal: off-diagonal {max_off:e} vs max c {max_c:e}"
        )));
    }
    if let Some(j) = c.iter().position(|&v| v <= 0.0) {
        return Err(Error::Consistency(format!(
            "non-positive Gram entry c_{j} = {}",
            c[j]
        )));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSpace {
    /// Dual basis `μ_i`, giving the blocks `B^k`.
    Dual,
    /// Nodal basis `φ_i`, giving the blocks `W^k`.
    Primal,
}

/// One sparse block per coordinate direction `k`: `∫ ∂_k φ_j · (μ_i | φ_i)`.
pub fn assemble_grad_coupling(mesh: &Mesh, test: TestSpace) -> Result<Vec<CsrMatrix>> {
    let n = mesh.nodes_per_element();
    (0..mesh.dim())
        .map(|k| {
            assemble_square(mesh, |ev, m| {
                for q in &ev.points {
                    let t = match test {
                        TestSpace::Dual => &q.mu,
                        TestSpace::Primal => &q.phi,
                    };
                    for a in 0..n {
                        for b in 0..n {
                            m[a * n + b] += q.weight * q.grad[b][k] * t[a];
                        }
                    }
                }
            })
        })
        .collect()
}

/// `P_ij = φ_j(x_i)`.
pub fn evaluation_matrix(mesh: &Mesh, data: &ScatteredData) -> Result<CsrMatrix> {
    if data.dim() != mesh.dim() {
        return Err(Error::invalid(format!(
            "data dimension {} does not match mesh dimension {}",
            data.dim(),
            mesh.dim()
        )));
    }
    let pair = ElementPair::new(mesh.shape())?;
    let n = mesh.nodes_per_element();
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (e, xi) = mesh.locate_point(data.point(i)).map_err(|err| match err {
                Error::OutOfDomain { point, .. } => Error::OutOfDomain {
                    index: Some(i),
                    point,
                },
                other => other,
            })?;
            let mut phi = [0.0; MAX_NODES];
            pair.nodal_values(&xi, &mut phi);
            Ok(mesh
                .element(e)
                .iter()
                .zip(&phi[..n])
                .filter(|(_, &v)| v != 0.0)
                .map(|(&j, &v)| (i, j, v))
                .collect())
        })
        .collect::<Result<_>>()?;
    let triplets: Vec<_> = rows.into_iter().flatten().collect();
    CsrMatrix::from_triplets(data.len(), mesh.n_vertices(), &triplets)
}

/// `(R, f) = (PᵀP, Pᵀz)`.
pub fn assemble_data_term(p: &CsrMatrix, z: &[f64]) -> Result<(CsrMatrix, Vec<f64>)> {
    if z.len() != p.nrows() {
        return Err(Error::invalid(format!(
            "{} values for an evaluation matrix with {} rows",
            z.len(),
            p.nrows()
        )));
    }
    let pt = p.transpose();
    let r = pt.matmul(p)?;
    let f = pt.mul_vec(z);
    Ok((r, f))
}

/// All matrices of the algebraic saddle-point system. The vector blocks
/// `A` and `M` are componentwise copies of `k` and `mass` and are not
/// stored separately.
#[derive(Debug, Clone)]
pub struct SystemBlocks {
    pub dim: usize,
    pub k: CsrMatrix,
    pub mass: CsrMatrix,
    pub gram: Vec<f64>,
    pub b: Vec<CsrMatrix>,
    pub w: Vec<CsrMatrix>,
    pub p: CsrMatrix,
    pub r: CsrMatrix,
    pub f: Vec<f64>,
}

impl SystemBlocks {
    pub fn assemble(mesh: &Mesh, data: &ScatteredData) -> Result<Self> {
        let p = evaluation_matrix(mesh, data)?;
        let (r, f) = assemble_data_term(&p, data.values())?;
        Ok(Self {
            dim: mesh.dim(),
            k: assemble_stiffness(mesh)?,
            mass: assemble_mass(mesh)?,
            gram: assemble_gram_diagonal(mesh)?,
            b: assemble_grad_coupling(mesh, TestSpace::Dual)?,
            w: assemble_grad_coupling(mesh, TestSpace::Primal)?,
            p,
            r,
            f,
        })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Replaces the data values, keeping the sites (and so `P`, `R`).
    pub fn with_values(&self, z: &[f64]) -> Result<Self> {
        let (r, f) = assemble_data_term(&self.p, z)?;
        Ok(Self {
            r,
            f,
            ..self.clone()
        })
    }
}
