//! Evaluable fields: analytic test functions and finite element functions.

use serde::{Deserialize, Serialize};

use crate::elements::{ElementPair, MAX_NODES};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// A field with point values.
pub trait ScalarField: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// A smooth field with a known gradient.
pub trait DifferentiableField: ScalarField {
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

/// A field that may be discontinuous in its gradient across element faces.
/// `anchor` is a point strictly inside the element where `x` is taken.
pub trait PiecewiseField: Sync {
    fn value_in(&self, x: &[f64], anchor: &[f64]) -> f64;
    fn gradient_in(&self, x: &[f64], anchor: &[f64], out: &mut [f64]);
}

impl<T: DifferentiableField> PiecewiseField for T {
    fn value_in(&self, x: &[f64], _anchor: &[f64]) -> f64 {
        self.value(x)
    }

    fn gradient_in(&self, x: &[f64], _anchor: &[f64], out: &mut [f64]) {
        self.gradient(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

impl DifferentiableField for Constant {
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `c + g·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub gradient: Vec<f64>,
}

impl ScalarField for Affine {
    fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.gradient.iter().zip(x).map(|(g, x)| g * x).sum::<f64>()
    }
}

impl DifferentiableField for Affine {
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.gradient);
    }
}

/// Pointwise difference `a − b`.
pub struct Difference<'a> {
    pub a: &'a dyn PiecewiseField,
    pub b: &'a dyn PiecewiseField,
}

impl PiecewiseField for Difference<'_> {
    fn value_in(&self, x: &[f64], anchor: &[f64]) -> f64 {
        self.a.value_in(x, anchor) - self.b.value_in(x, anchor)
    }

    fn gradient_in(&self, x: &[f64], anchor: &[f64], out: &mut [f64]) {
        let mut tmp = [0.0; 3];
        let d = out.len();
        self.a.gradient_in(x, anchor, out);
        self.b.gradient_in(x, anchor, &mut tmp[..d]);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o -= t;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Linear,
    Quadratic,
    SinProduct,
    GaussianBump,
    Franke,
}

impl FieldKind {
    pub const ALL: [FieldKind; 5] = [
        FieldKind::Linear,
        FieldKind::Quadratic,
        FieldKind::SinProduct,
        FieldKind::GaussianBump,
        FieldKind::Franke,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Linear => "linear",
            FieldKind::Quadratic => "quadratic",
            FieldKind::SinProduct => "sin-product",
            FieldKind::GaussianBump => "gaussian-bump",
            FieldKind::Franke => "franke",
        }
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FieldKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = FieldKind::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!("unknown field '{s}' (known: {})", names.join(", ")))
            })
    }
}

impl std::fmt::Display for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A catalog field in 2 or 3 dimensions. Franke's surface depends on the
/// first two coordinates only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogField {
    kind: FieldKind,
    dim: usize,
}

const BUMP_RATE: f64 = 20.0;

impl CatalogField {
    pub fn new(kind: FieldKind, dim: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::invalid(format!(
                "fields are defined in 2 or 3 dimensions, not {dim}"
            )));
        }
        Ok(Self { kind, dim })
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

const LINEAR_COEFFS: [f64; 3] = [2.0, -3.0, 0.5];

fn franke_terms(x: f64, y: f64) -> [(f64, f64, f64); 4] {
    // (value, d/dx, d/dy) of each exponential term
    let t1 = 0.75 * (-((9.0 * x - 2.0).powi(2) + (9.0 * y - 2.0).powi(2)) / 4.0).exp();
    let t2 = 0.75 * (-(9.0 * x + 1.0).powi(2) / 49.0 - (9.0 * y + 1.0) / 10.0).exp();
    let t3 = 0.5 * (-((9.0 * x - 7.0).powi(2) + (9.0 * y - 3.0).powi(2)) / 4.0).exp();
    let t4 = -0.2 * (-(9.0 * x - 4.0).powi(2) - (9.0 * y - 7.0).powi(2)).exp();
    [
        (
            t1,
            t1 * (-4.5 * (9.0 * x - 2.0)),
            t1 * (-4.5 * (9.0 * y - 2.0)),
        ),
        (t2, t2 * (-18.0 * (9.0 * x + 1.0) / 49.0), t2 * -0.9),
        (
            t3,
            t3 * (-4.5 * (9.0 * x - 7.0)),
            t3 * (-4.5 * (9.0 * y - 3.0)),
        ),
        (
            t4,
            t4 * (-18.0 * (9.0 * x - 4.0)),
            t4 * (-18.0 * (9.0 * y - 7.0)),
        ),
    ]
}

impl ScalarField for CatalogField {
    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        match self.kind {
            FieldKind::Linear => 1.0 + (0..d).map(|k| LINEAR_COEFFS[k] * x[k]).sum::<f64>(),
            FieldKind::Quadratic => {
                let mut q = x[0] * x[0] + 0.5 * x[0] * x[1] - 0.75 * x[1] * x[1] + x[0] - 0.5;
                if d == 3 {
                    q += x[2] * x[2] - x[1] * x[2];
                }
                q
            }
            FieldKind::SinProduct => (0..d)
                .map(|k| (std::f64::consts::PI * x[k]).sin())
                .product(),
            FieldKind::GaussianBump => {
                let r2: f64 = (0..d).map(|k| (x[k] - 0.5).powi(2)).sum();
                (-BUMP_RATE * r2).exp()
            }
            FieldKind::Franke => franke_terms(x[0], x[1]).iter().map(|t| t.0).sum(),
        }
    }
}

impl DifferentiableField for CatalogField {
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.kind {
            FieldKind::Linear => out.copy_from_slice(&LINEAR_COEFFS[..d]),
            FieldKind::Quadratic => {
                out[0] = 2.0 * x[0] + 0.5 * x[1] + 1.0;
                out[1] = 0.5 * x[0] - 1.5 * x[1];
                if d == 3 {
                    out[1] -= x[2];
                    out[2] = 2.0 * x[2] - x[1];
                }
            }
            FieldKind::SinProduct => {
                let pi = std::f64::consts::PI;
                for k in 0..d {
                    out[k] = (0..d)
                        .map(|m| {
                            if m == k {
                                pi * (pi * x[m]).cos()
                            } else {
                                (pi * x[m]).sin()
                            }
                        })
                        .product();
                }
            }
            FieldKind::GaussianBump => {
                let v = self.value(x);
                for k in 0..d {
                    out[k] = -2.0 * BUMP_RATE * (x[k] - 0.5) * v;
                }
            }
            FieldKind::Franke => {
                let terms = franke_terms(x[0], x[1]);
                out[0] = terms.iter().map(|t| t.1).sum();
                out[1] = terms.iter().map(|t| t.2).sum();
                if d == 3 {
                    out[2] = 0.0;
                }
            }
        }
    }
}

/// `Σ_j coeffs_j φ_j` over a mesh.
#[derive(Debug, Clone, Copy)]
pub struct FeFunction<'a> {
    mesh: &'a Mesh,
    pair: &'a ElementPair,
    coeffs: &'a [f64],
}

impl<'a> FeFunction<'a> {
    pub fn new(mesh: &'a Mesh, pair: &'a ElementPair, coeffs: &'a [f64]) -> Result<Self> {
        if coeffs.len() != mesh.n_vertices() {
            return Err(Error::invalid(format!(
                "{} coefficients for a mesh with {} vertices",
                coeffs.len(),
                mesh.n_vertices()
            )));
        }
        if pair.shape() != mesh.shape() {
            return Err(Error::invalid(
                "element pair does not match the mesh cell shape",
            ));
        }
        Ok(Self { mesh, pair, coeffs })
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }

    pub fn coefficients(&self) -> &'a [f64] {
        self.coeffs
    }

    /// Value on element `e`, with `x` given in physical coordinates.
    pub fn value_on(&self, e: usize, x: &[f64]) -> Result<f64> {
        let xi = self.mesh.element_map(e)?.to_reference(x);
        Ok(self.value_at_reference(e, &xi))
    }

    fn value_at_reference(&self, e: usize, xi: &[f64; 3]) -> f64 {
        let mut phi = [0.0; MAX_NODES];
        self.pair.nodal_values(xi, &mut phi);
        self.mesh
            .element(e)
            .iter()
            .zip(&phi)
            .map(|(&j, p)| self.coeffs[j] * p)
            .sum()
    }

    /// Gradient restricted to element `e`.
    pub fn gradient_on(&self, e: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let map = self.mesh.element_map(e)?;
        let xi = map.to_reference(x);
        let mut dphi = [[0.0; 3]; MAX_NODES];
        self.pair.nodal_gradients(&xi, &mut dphi);
        out.fill(0.0);
        for (a, &j) in self.mesh.element(e).iter().enumerate() {
            let g = map.push_gradient(&dphi[a]);
            for (o, gk) in out.iter_mut().zip(&g) {
                *o += self.coeffs[j] * gk;
            }
        }
        Ok(())
    }

    /// Value at an arbitrary point of the closed domain.
    pub fn try_value(&self, x: &[f64]) -> Result<f64> {
        let (e, xi) = self.mesh.locate_point(x)?;
        Ok(self.value_at_reference(e, &xi))
    }

    fn element_of(&self, anchor: &[f64]) -> usize {
        self.mesh
            .locate_point(anchor)
            .map(|(e, _)| e)
            .expect("anchor point lies outside the mesh")
    }
}

impl ScalarField for FeFunction<'_> {
    /// Panics outside the domain; use [`FeFunction::try_value`] otherwise.
    fn value(&self, x: &[f64]) -> f64 {
        self.try_value(x)
            .expect("evaluation point lies outside the mesh")
    }
}

impl PiecewiseField for FeFunction<'_> {
    fn value_in(&self, x: &[f64], anchor: &[f64]) -> f64 {
        let e = self.element_of(anchor);
        self.value_on(e, x).expect("degenerate element")
    }

    fn gradient_in(&self, x: &[f64], anchor: &[f64], out: &mut [f64]) {
        let e = self.element_of(anchor);
        self.gradient_on(e, x, out).expect("degenerate element")
    }
}
