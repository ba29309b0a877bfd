//! Reference elements: the nodal basis of the continuous piecewise
//! (multi)linear space and its biorthogonal dual basis.
//!
//! On every reference cell the dual functions `μ̂_i` satisfy
//! `∫ μ̂_i φ̂_j = ĉ_j δ_ij` with `ĉ_j = ∫ φ̂_j > 0`, and they sum to one.
//! Gluing them exactly like the nodal functions gives a global dual basis
//! with `supp μ_i = supp φ_i` and a diagonal Gram matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::quadrature;

/// Largest local node count (hexahedron).
pub const MAX_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Simplex,
    Parallelotope,
}

impl ElementKind {
    pub fn nodes_per_element(self, dim: usize) -> usize {
        match self {
            ElementKind::Simplex => dim + 1,
            ElementKind::Parallelotope => 1 << dim,
        }
    }
}

impl std::str::FromStr for ElementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" => Ok(ElementKind::Simplex),
            "parallelotope" | "quad" | "hex" => Ok(ElementKind::Parallelotope),
            other => Err(Error::invalid(format!(
                "unknown element kind '{other}' (expected simplex or parallelotope)"
            ))),
        }
    }
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ElementKind::Simplex => "simplex",
            ElementKind::Parallelotope => "parallelotope",
        })
    }
}

/// Reference cell: unit simplex `{x_k > 0, Σ x_k < 1}` or cube `(-1, 1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellShape {
    Triangle,
    Tetrahedron,
    Quadrilateral,
    Hexahedron,
}

impl CellShape {
    pub fn new(kind: ElementKind, dim: usize) -> Result<Self> {
        match (kind, dim) {
            (ElementKind::Simplex, 2) => Ok(CellShape::Triangle),
            (ElementKind::Simplex, 3) => Ok(CellShape::Tetrahedron),
            (ElementKind::Parallelotope, 2) => Ok(CellShape::Quadrilateral),
            (ElementKind::Parallelotope, 3) => Ok(CellShape::Hexahedron),
            _ => Err(Error::invalid(format!(
                "unsupported element: {kind} in dimension {dim}"
            ))),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            CellShape::Triangle | CellShape::Quadrilateral => 2,
            CellShape::Tetrahedron | CellShape::Hexahedron => 3,
        }
    }

    pub fn kind(self) -> ElementKind {
        match self {
            CellShape::Triangle | CellShape::Tetrahedron => ElementKind::Simplex,
            CellShape::Quadrilateral | CellShape::Hexahedron => ElementKind::Parallelotope,
        }
    }

    pub fn n_nodes(self) -> usize {
        self.kind().nodes_per_element(self.dim())
    }

    pub fn reference_volume(self) -> f64 {
        match self {
            CellShape::Triangle => 0.5,
            CellShape::Tetrahedron => 1.0 / 6.0,
            CellShape::Quadrilateral => 4.0,
            CellShape::Hexahedron => 8.0,
        }
    }

    /// Reference node `i`. Simplex: origin then unit vectors. Cube: bit `k`
    /// of `i` selects the sign of coordinate `k`.
    pub fn node(self, i: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        match self.kind() {
            ElementKind::Simplex => {
                if i > 0 {
                    p[i - 1] = 1.0;
                }
            }
            ElementKind::Parallelotope => {
                for (k, c) in p.iter_mut().enumerate().take(self.dim()) {
                    *c = if i >> k & 1 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        p
    }

    /// True if `xi` lies in the closed reference cell up to `tol`.
    pub fn contains(self, xi: &[f64], tol: f64) -> bool {
        let d = self.dim();
        match self.kind() {
            ElementKind::Simplex => {
                xi[..d].iter().all(|&x| x >= -tol) && xi[..d].iter().sum::<f64>() <= 1.0 + tol
            }
            ElementKind::Parallelotope => xi[..d].iter().all(|&x| x.abs() <= 1.0 + tol),
        }
    }
}

/// Nodal basis of the reference element paired with its biorthogonal dual.
#[derive(Debug, Clone)]
pub struct ElementPair {
    shape: CellShape,
    /// Dual of the 1D linear pair on (-1, 1), as coefficients in the nodal
    /// basis: `μ_i = Σ_k dual_1d[i][k] φ_k`.
    dual_1d: [[f64; 2]; 2],
    scaling: Vec<f64>,
}

pub fn make_element_pair(kind: ElementKind, dim: usize) -> Result<ElementPair> {
    ElementPair::new(CellShape::new(kind, dim)?)
}

impl ElementPair {
    pub fn new(shape: CellShape) -> Result<Self> {
        let dual_1d = dual_1d()?;
        let mut pair = Self {
            shape,
            dual_1d,
            scaling: Vec::new(),
        };
        let rule = quadrature(shape, 2)?;
        let n = shape.n_nodes();
        let mut scaling = vec![0.0; n];
        let (mut phi, mut mu) = ([0.0; MAX_NODES], [0.0; MAX_NODES]);
        for (xi, w) in rule.iter() {
            pair.nodal_values(xi, &mut phi);
            pair.dual_values(xi, &mut mu);
            for j in 0..n {
                scaling[j] += w * mu[j] * phi[j];
            }
        }
        if scaling.iter().any(|&c| c <= 0.0) {
            return Err(Error::Consistency(format!(
                "non-positive dual scaling on {shape:?}: {scaling:?}"
            )));
        }
        pair.scaling = scaling;
        Ok(pair)
    }

    pub fn shape(&self) -> CellShape {
        self.shape
    }

    pub fn kind(&self) -> ElementKind {
        self.shape.kind()
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn n_loc(&self) -> usize {
        self.shape.n_nodes()
    }

    /// Reference scaling factors `ĉ_j = ∫ μ̂_j φ̂_j`.
    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn nodal_values(&self, xi: &[f64], out: &mut [f64]) {
        match self.shape {
            CellShape::Triangle => {
                let (x, y) = (xi[0], xi[1]);
                out[..3].copy_from_slice(&[1.0 - x - y, x, y]);
            }
            CellShape::Tetrahedron => {
                let (x, y, z) = (xi[0], xi[1], xi[2]);
                out[..4].copy_from_slice(&[1.0 - x - y - z, x, y, z]);
            }
            CellShape::Quadrilateral | CellShape::Hexahedron => {
                self.tensor(xi, out, linear_1d)
            }
        }
    }

    /// Reference gradients, `out[i][k] = ∂φ̂_i/∂ξ_k`.
    pub fn nodal_gradients(&self, xi: &[f64], out: &mut [[f64; 3]]) {
        let d = self.dim();
        match self.kind() {
            ElementKind::Simplex => {
                for (i, g) in out.iter_mut().take(d + 1).enumerate() {
                    *g = [0.0; 3];
                    for (k, gk) in g.iter_mut().take(d).enumerate() {
                        *gk = if i == 0 {
                            -1.0
                        } else if i == k + 1 {
                            1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            ElementKind::Parallelotope => {
                for (i, g) in out.iter_mut().take(1 << d).enumerate() {
                    *g = [0.0; 3];
                    for k in 0..d {
                        let mut prod = 1.0;
                        for m in 0..d {
                            let s = i >> m & 1;
                            prod *= if m == k {
                                if s == 1 {
                                    0.5
                                } else {
                                    -0.5
                                }
                            } else {
                                linear_1d(s, xi[m])
                            };
                        }
                        g[k] = prod;
                    }
                }
            }
        }
    }

    pub fn dual_values(&self, xi: &[f64], out: &mut [f64]) {
        match self.shape {
            CellShape::Triangle => {
                let (x, y) = (xi[0], xi[1]);
                out[..3].copy_from_slice(&[3.0 - 4.0 * x - 4.0 * y, 4.0 * x - 1.0, 4.0 * y - 1.0]);
            }
            CellShape::Tetrahedron => {
                let (x, y, z) = (xi[0], xi[1], xi[2]);
                out[..4].copy_from_slice(&[
                    4.0 - 5.0 * x - 5.0 * y - 5.0 * z,
                    5.0 * x - 1.0,
                    5.0 * y - 1.0,
                    5.0 * z - 1.0,
                ]);
            }
            CellShape::Quadrilateral | CellShape::Hexahedron => {
                let c = self.dual_1d;
                self.tensor(xi, out, |s, t| {
                    c[s][0] * linear_1d(0, t) + c[s][1] * linear_1d(1, t)
                })
            }
        }
    }

    fn tensor(&self, xi: &[f64], out: &mut [f64], f: impl Fn(usize, f64) -> f64) {
        let d = self.dim();
        for (i, o) in out.iter_mut().take(1 << d).enumerate() {
            *o = (0..d).map(|k| f(i >> k & 1, xi[k])).product();
        }
    }
}

/// 1D nodal function on (-1, 1): node 0 at -1, node 1 at +1.
fn linear_1d(node: usize, t: f64) -> f64 {
    if node == 1 {
        0.5 * (1.0 + t)
    } else {
        0.5 * (1.0 - t)
    }
}

/// Solves the 2×2 biorthogonality system `C · M = diag(∫φ_j)` on (-1, 1),
/// where `M` is the local mass matrix, for the dual coefficients `C`.
fn dual_1d() -> Result<[[f64; 2]; 2]> {
    let (x, w) = crate::quadrature::gauss_legendre(2);
    let mut mass = [[0.0; 2]; 2];
    let mut integral = [0.0; 2];
    for (&t, &wt) in x.iter().zip(&w) {
        for i in 0..2 {
            integral[i] += wt * linear_1d(i, t);
            for j in 0..2 {
                mass[i][j] += wt * linear_1d(i, t) * linear_1d(j, t);
            }
        }
    }
    let det = mass[0][0] * mass[1][1] - mass[0][1] * mass[1][0];
    if det.abs() < 1e-14 {
        return Err(Error::Consistency("singular 1D mass matrix".into()));
    }
    let inv = [
        [mass[1][1] / det, -mass[0][1] / det],
        [-mass[1][0] / det, mass[0][0] / det],
    ];
    Ok([
        [integral[0] * inv[0][0], integral[0] * inv[0][1]],
        [integral[1] * inv[1][0], integral[1] * inv[1][1]],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsupported_dimension() {
        assert!(matches!(
            make_element_pair(ElementKind::Simplex, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(make_element_pair(ElementKind::Parallelotope, 4).is_err());
    }

    #[test]
    fn one_dimensional_dual_is_affine() {
        // μ_0 = (1 - 3t)/2, μ_1 = (1 + 3t)/2
        let c = dual_1d().unwrap();
        assert!((c[0][0] - 2.0).abs() < 1e-14 && (c[0][1] + 1.0).abs() < 1e-14);
        assert!((c[1][0] + 1.0).abs() < 1e-14 && (c[1][1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn reference_nodes_of_cube() {
        assert_eq!(CellShape::Quadrilateral.node(0), [-1.0, -1.0, 0.0]);
        assert_eq!(CellShape::Quadrilateral.node(2), [-1.0, 1.0, 0.0]);
        assert_eq!(CellShape::Hexahedron.node(7), [1.0, 1.0, 1.0]);
        assert_eq!(CellShape::Tetrahedron.node(3), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "simplex".parse::<ElementKind>().unwrap(),
            ElementKind::Simplex
        );
        assert!("prism".parse::<ElementKind>().is_err());
    }
}
