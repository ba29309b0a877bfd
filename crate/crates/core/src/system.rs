//! Static condensation of the saddle-point system and its solution.
//!
//! Unknown ordering in the full system is `[u, σ_1..σ_d, φ_1..φ_d]`; with
//! stabilization weight `r` the block matrix reads
//!
//! ```text
//! [ R + rK    -r Wᵀ        -Bᵀ ]
//! [ -r W      αA + rM       D  ]
//! [ -B        D             0  ]
//! ```
//!
//! Because `D` is diagonal, `σ_k = D⁻¹B_k u` and the multiplier rows
//! eliminate exactly, leaving one symmetric positive definite system in `u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::SystemBlocks;
use crate::error::{Error, Result};
use crate::sparse::{dot, norm, CsrMatrix};

/// Largest dense saddle system the oracle will factorize.
pub const DEFAULT_DENSE_CAP: usize = 3000;

/// Allowed relative asymmetry of the condensed matrix before averaging.
const SYMMETRY_TOL: f64 = 1e-12;

/// `‖f‖` below this is treated as a zero right-hand side.
const ZERO_RHS: f64 = 1e-14;

/// Pivot ratio under which the dense factorization is declared singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Smoothing weight `α` and stabilization weight `r` of the mixed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleWeights {
    pub alpha: f64,
    pub stabilization: f64,
}

impl SaddleWeights {
    /// Stabilization fixed to 1.
    pub fn new(alpha: f64) -> Result<Self> {
        Self::with_stabilization(alpha, 1.0)
    }

    pub fn with_stabilization(alpha: f64, stabilization: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "smoothing parameter must be positive, got {alpha}"
            )));
        }
        if !(stabilization > 0.0 && stabilization.is_finite()) {
            return Err(Error::invalid(format!(
                "stabilization weight must be positive, got {stabilization}"
            )));
        }
        Ok(Self {
            alpha,
            stabilization,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReducedOperator {
    matrix: CsrMatrix,
    weights: SaddleWeights,
}

impl ReducedOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn weights(&self) -> SaddleWeights {
        self.weights
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(u)
    }

    /// `a(u, v) = vᵀ S u`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(&self.apply(u), v)
    }
}

fn check_gram(gram: &[f64]) -> Result<()> {
    match gram.iter().position(|&c| !(c > 0.0)) {
        Some(j) => Err(Error::InvalidState(format!(
            "Gram diagonal entry {j} is not positive ({})",
            gram[j]
        ))),
        None => Ok(()),
    }
}

fn inverse_gram(blocks: &SystemBlocks) -> Result<Vec<f64>> {
    check_gram(&blocks.gram)?;
    Ok(blocks.gram.iter().map(|c| 1.0 / c).collect())
}

/// Forms `S = (R + rK) − r Σ_k (W_kᵀD⁻¹B_k + B_kᵀD⁻¹W_k) + Σ_k B_kᵀD⁻¹(αK + rM)D⁻¹B_k`.
pub fn condense(blocks: &SystemBlocks, weights: SaddleWeights) -> Result<ReducedOperator> {
    let dinv = inverse_gram(blocks)?;
    let r = weights.stabilization;
    let inner = blocks
        .k
        .linear_combination(weights.alpha, &blocks.mass, r)?;
    let mut s = blocks.r.linear_combination(1.0, &blocks.k, r)?;
    for (b, w) in blocks.b.iter().zip(&blocks.w) {
        // G = D⁻¹B maps nodal values to recovered gradient coefficients
        let g = b.scale_rows(&dinv);
        let gt = g.transpose();
        let cross = w.transpose().matmul(&g)?;
        s = s.linear_combination(1.0, &cross, -r)?;
        s = s.linear_combination(1.0, &cross.transpose(), -r)?;
        s = s.add(&gt.matmul(&inner.matmul(&g)?)?)?;
    }
    let (sym, deviation) = s.symmetrized()?;
    let scale = s.max_abs().max(f64::MIN_POSITIVE);
    if deviation > SYMMETRY_TOL * scale {
        return Err(Error::Consistency(format!(
            "condensed operator asymmetric: deviation {deviation:e} at scale {scale:e}"
        )));
    }
    Ok(ReducedOperator {
        matrix: sym,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
}

impl std::str::FromStr for Preconditioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preconditioner::None),
            "jacobi" => Ok(Preconditioner::Jacobi),
            other => Err(Error::invalid(format!("unknown preconditioner '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual target `‖Su − f‖ / ‖f‖`.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 n`.
    pub max_iterations: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid(format!(
                "solver tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::invalid("solver needs at least one iteration"));
        }
        Ok(())
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients on the reduced operator.
pub fn solve_reduced(op: &ReducedOperator, f: &[f64], cfg: &SolverConfig) -> Result<SolveReport> {
    solve_reduced_scaled(op, f, norm(f), cfg)
}

/// Solves `S x = rhs`, stopping once `‖S x − rhs‖ ≤ tolerance · reference`.
/// Used for correction equations whose right-hand side is a residual of a
/// larger problem with norm `reference`.
pub fn solve_reduced_scaled(
    op: &ReducedOperator,
    rhs: &[f64],
    reference: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let n = op.n();
    if rhs.len() != n {
        return Err(Error::invalid(format!(
            "right-hand side has {} entries, expected {n}",
            rhs.len()
        )));
    }
    if !(reference >= 0.0 && reference.is_finite()) {
        return Err(Error::invalid(format!(
            "residual reference norm must be finite, got {reference}"
        )));
    }
    let rnorm0 = norm(rhs);
    if reference <= ZERO_RHS || rnorm0 <= cfg.tolerance * reference {
        let rel = if reference > 0.0 {
            rnorm0 / reference
        } else {
            0.0
        };
        return Ok(SolveReport {
            u: vec![0.0; n],
            iterations: 0,
            relative_residual: rel,
        });
    }
    let max_iter = cfg.max_iterations.unwrap_or(10 * n.max(1));
    let precond: Vec<f64> = match cfg.preconditioner {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => {
            let diag = op.matrix.diagonal();
            if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
                return Err(Error::InvalidState(format!(
                    "reduced operator has non-positive diagonal entry {i} ({})",
                    diag[i]
                )));
            }
            diag.iter().map(|d| 1.0 / d).collect()
        }
    };

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut rel = rnorm0 / reference;

    for it in 1..=max_iter {
        op.matrix.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Singular(format!(
                "reduced operator is not positive definite (pᵀSp = {pq:e})"
            )));
        }
        let step = rz / pq;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        rel = norm(&r) / reference;
        if rel <= cfg.tolerance {
            // confirm against the true residual; restart from x if it drifted
            let sx = op.apply(&x);
            for i in 0..n {
                r[i] = rhs[i] - sx[i];
            }
            rel = norm(&r) / reference;
            if rel <= cfg.tolerance {
                return Ok(SolveReport {
                    u: x,
                    iterations: it,
                    relative_residual: rel,
                });
            }
            for i in 0..n {
                z[i] = r[i] * precond[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel,
    })
}

/// Smoother coefficients together with the recovered gradient and multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionTriple {
    pub u: Vec<f64>,
    /// `sigma[k]` holds the nodal coefficients of component `k`.
    pub sigma: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
}

/// Back-substitutes the last two block rows:
/// `σ_k = D⁻¹B_k u`, `φ_k = D⁻¹(r W_k u − (αK + rM) σ_k)`.
pub fn recover_auxiliary(
    blocks: &SystemBlocks,
    u: &[f64],
    weights: SaddleWeights,
) -> Result<SolutionTriple> {
    let dinv = inverse_gram(blocks)?;
    if u.len() != blocks.n() {
        return Err(Error::invalid(format!(
            "coefficient vector has {} entries, expected {}",
            u.len(),
            blocks.n()
        )));
    }
    let r = weights.stabilization;
    let mut sigma = Vec::with_capacity(blocks.dim);
    let mut phi = Vec::with_capacity(blocks.dim);
    for (b, w) in blocks.b.iter().zip(&blocks.w) {
        let s: Vec<f64> = b.mul_vec(u).iter().zip(&dinv).map(|(v, d)| v * d).collect();
        let wu = w.mul_vec(u);
        let ks = blocks.k.mul_vec(&s);
        let ms = blocks.mass.mul_vec(&s);
        let m: Vec<f64> = (0..u.len())
            .map(|i| dinv[i] * (r * wu[i] - weights.alpha * ks[i] - r * ms[i]))
            .collect();
        sigma.push(s);
        phi.push(m);
    }
    Ok(SolutionTriple {
        u: u.to_vec(),
        sigma,
        phi,
    })
}

/// The full symmetric indefinite block matrix, densely.
pub fn saddle_matrix_dense(blocks: &SystemBlocks, weights: SaddleWeights) -> DMatrix<f64> {
    let n = blocks.n();
    let d = blocks.dim;
    let r = weights.stabilization;
    let size = (1 + 2 * d) * n;
    let mut a = DMatrix::zeros(size, size);
    let put = |a: &mut DMatrix<f64>, row0: usize, col0: usize, m: &CsrMatrix, s: f64| {
        for (i, j, v) in m.triplets() {
            a[(row0 + i, col0 + j)] += s * v;
        }
    };
    put(&mut a, 0, 0, &blocks.r, 1.0);
    put(&mut a, 0, 0, &blocks.k, r);
    for k in 0..d {
        let sk = n * (1 + k);
        let pk = n * (1 + d + k);
        let wt = blocks.w[k].transpose();
        let bt = blocks.b[k].transpose();
        put(&mut a, 0, sk, &wt, -r);
        put(&mut a, 0, pk, &bt, -1.0);
        put(&mut a, sk, 0, &blocks.w[k], -r);
        put(&mut a, sk, sk, &blocks.k, weights.alpha);
        put(&mut a, sk, sk, &blocks.mass, r);
        put(&mut a, pk, 0, &blocks.b[k], -1.0);
        for i in 0..n {
            a[(sk + i, pk + i)] += blocks.gram[i];
            a[(pk + i, sk + i)] += blocks.gram[i];
        }
    }
    a
}

/// Direct solve of the full saddle-point system; an oracle for the
/// condensed path.
pub fn solve_saddle_dense(
    blocks: &SystemBlocks,
    weights: SaddleWeights,
    f: &[f64],
    cap: usize,
) -> Result<SolutionTriple> {
    let n = blocks.n();
    let d = blocks.dim;
    let size = (1 + 2 * d) * n;
    if size > cap {
        return Err(Error::TooLarge { dim: size, cap });
    }
    if f.len() != n {
        return Err(Error::invalid(format!(
            "right-hand side has {} entries, expected {n}",
            f.len()
        )));
    }
    check_gram(&blocks.gram)?;
    let a = saddle_matrix_dense(blocks, weights);
    // symmetric equilibration so the pivot test is scale-free
    let scale: Vec<f64> = (0..size)
        .map(|i| {
            let m = a.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m > 0.0 {
                1.0 / m.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for j in 0..size {
        for i in 0..size {
            scaled[(i, j)] *= scale[i] * scale[j];
        }
    }
    let lu = scaled.full_piv_lu();
    let pivots = lu.u().diagonal();
    let max = pivots.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = pivots.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min > SINGULAR_PIVOT_RATIO * max) {
        return Err(Error::Singular(format!(
            "saddle matrix is numerically singular (pivot ratio {:e})",
            min / max
        )));
    }
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, n).copy_from_slice(f);
    let scaled_rhs = DVector::from_iterator(size, rhs.iter().zip(&scale).map(|(b, s)| b * s));
    let y = lu
        .solve(&scaled_rhs)
        .ok_or_else(|| Error::Singular("saddle factorization failed".into()))?;
    let x = DVector::from_iterator(size, y.iter().zip(&scale).map(|(y, s)| y * s));
    let bnorm = rhs.norm();
    if bnorm > 0.0 {
        let res = (&a * &x - &rhs).norm() / bnorm;
        if res > 1e-10 {
            return Err(Error::Singular(format!(
                "dense solve residual {res:e} too large"
            )));
        }
    }
    let slice = |start: usize| x.rows(start, n).iter().copied().collect::<Vec<f64>>();
    Ok(SolutionTriple {
        u: slice(0),
        sigma: (0..d).map(|k| slice(n * (1 + k))).collect(),
        phi: (0..d).map(|k| slice(n * (1 + d + k))).collect(),
    })
}
