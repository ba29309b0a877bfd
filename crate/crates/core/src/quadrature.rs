//! Quadrature rules on the reference cells.
//!
//! Degree ≤ 2 on simplices uses the classical symmetric rules; higher
//! degrees use collapsed (Duffy) Gauss–Legendre products. Parallelotopes
//! use tensor Gauss–Legendre rules on `(-1, 1)^d`.

use crate::elements::CellShape;
use crate::error::{Error, Result};

/// Highest polynomial exactness offered.
pub const MAX_DEGREE: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    shape: CellShape,
    degree: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn shape(&self) -> CellShape {
        self.shape
    }

    /// Polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference points; only the first `dim` coordinates are meaningful.
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        let d = self.shape.dim();
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(p, &w)| (&p[..d], w))
    }
}

pub fn quadrature(shape: CellShape, degree: usize) -> Result<QuadratureRule> {
    if degree > MAX_DEGREE {
        return Err(Error::invalid(format!(
            "quadrature degree {degree} not available (maximum {MAX_DEGREE})"
        )));
    }
    let (points, weights) = match shape {
        CellShape::Triangle if degree <= 2 => {
            let (a, b) = (1.0 / 6.0, 2.0 / 3.0);
            (
                vec![[a, a, 0.0], [b, a, 0.0], [a, b, 0.0]],
                vec![1.0 / 6.0; 3],
            )
        }
        CellShape::Tetrahedron if degree <= 2 => {
            let a = (5.0 + 3.0 * 5f64.sqrt()) / 20.0;
            let b = (5.0 - 5f64.sqrt()) / 20.0;
            (
                vec![[b, b, b], [a, b, b], [b, a, b], [b, b, a]],
                vec![1.0 / 24.0; 4],
            )
        }
        CellShape::Triangle => collapsed_triangle(degree),
        CellShape::Tetrahedron => collapsed_tetrahedron(degree),
        CellShape::Quadrilateral | CellShape::Hexahedron => {
            tensor_gauss(shape.dim(), (degree + 1).div_ceil(2).max(1))
        }
    };
    Ok(QuadratureRule {
        shape,
        degree,
        points,
        weights,
    })
}

/// Gauss–Legendre nodes and weights on `(-1, 1)`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if 2 * i + 1 == n {
            x = 0.0;
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x) * (1.0 + x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (p0 - x * p1) / ((1.0 - x) * (1.0 + x));
    (p1, dp)
}

fn gauss_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

fn collapsed_triangle(degree: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let (a, wa) = gauss_unit((degree + 2).div_ceil(2));
    let (b, wb) = gauss_unit((degree + 1).div_ceil(2));
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (&s, &ws) in a.iter().zip(&wa) {
        for (&t, &wt) in b.iter().zip(&wb) {
            points.push([s, t * (1.0 - s), 0.0]);
            weights.push(ws * wt * (1.0 - s));
        }
    }
    (points, weights)
}

fn collapsed_tetrahedron(degree: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let (a, wa) = gauss_unit((degree + 3).div_ceil(2));
    let (b, wb) = gauss_unit((degree + 2).div_ceil(2));
    let (c, wc) = gauss_unit((degree + 1).div_ceil(2));
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (&s, &ws) in a.iter().zip(&wa) {
        for (&t, &wt) in b.iter().zip(&wb) {
            for (&u, &wu) in c.iter().zip(&wc) {
                let y = t * (1.0 - s);
                let z = u * (1.0 - s) * (1.0 - t);
                points.push([s, y, z]);
                weights.push(ws * wt * wu * (1.0 - s) * (1.0 - s) * (1.0 - t));
            }
        }
    }
    (points, weights)
}

fn tensor_gauss(dim: usize, n: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let total = n.pow(dim as u32);
    for idx in 0..total {
        let mut p = [0.0; 3];
        let mut weight = 1.0;
        let mut rest = idx;
        for coord in p.iter_mut().take(dim) {
            let k = rest % n;
            rest /= n;
            *coord = x[k];
            weight *= w[k];
        }
        points.push(p);
        weights.push(weight);
    }
    (points, weights)
}
