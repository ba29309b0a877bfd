//! Structured meshes of axis-aligned boxes.
//!
//! Cells of a tensor grid are either kept as parallelotopes or split into
//! simplices (2 triangles per square, 6 Kuhn tetrahedra per cube). All
//! simplices are positively oriented, and the families are nested under
//! uniform refinement.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::elements::{CellShape, ElementKind};
use crate::error::{Error, Result};

/// Slack, in reference coordinates, for point-in-element tests.
const LOCATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || !(2..=3).contains(&lower.len()) {
            return Err(Error::invalid(format!(
                "domain corners must both have 2 or 3 coordinates (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::invalid("domain corners must be finite"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| u <= l) {
            return Err(Error::invalid(format!(
                "upper corner {upper:?} must exceed lower corner {lower:?} componentwise"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    /// Closed containment with a relative slack of `1e-12` per axis.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|k| {
                let tol = 1e-12 * self.extent(k);
                x[k] >= self.lower[k] - tol && x[k] <= self.upper[k] + tol
            })
    }
}

/// Affine map `x = origin + J ξ` from the reference cell onto an element.
/// In 2D the matrices are padded with a unit third axis.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    dim: usize,
    origin: Vector3<f64>,
    jacobian: Matrix3<f64>,
    inverse: Matrix3<f64>,
    det: f64,
}

impl AffineMap {
    fn new(dim: usize, origin: Vector3<f64>, jacobian: Matrix3<f64>) -> Result<Self> {
        let det = jacobian.determinant();
        let inverse = jacobian
            .try_inverse()
            .filter(|_| det > 0.0)
            .ok_or_else(|| Error::Assembly(format!("degenerate element map (det = {det:e})")))?;
        Ok(Self {
            dim,
            origin,
            jacobian,
            inverse,
            det,
        })
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn jacobian(&self) -> &Matrix3<f64> {
        &self.jacobian
    }

    pub fn to_physical(&self, xi: &[f64]) -> [f64; 3] {
        let x = self.origin + self.jacobian * pad(xi);
        [x[0], x[1], if self.dim == 3 { x[2] } else { 0.0 }]
    }

    pub fn to_reference(&self, x: &[f64]) -> [f64; 3] {
        let xi = self.inverse * (pad(x) - self.origin);
        [xi[0], xi[1], if self.dim == 3 { xi[2] } else { 0.0 }]
    }

    /// Physical gradient `J^{-T} ∇̂`.
    pub fn push_gradient(&self, ref_grad: &[f64; 3]) -> [f64; 3] {
        let g = self.inverse.transpose() * Vector3::from(*ref_grad);
        [g[0], g[1], if self.dim == 3 { g[2] } else { 0.0 }]
    }
}

fn pad(x: &[f64]) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x.get(2).copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center: usize,
    /// Sorted element ids, including `center`.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Domain,
    cells: Vec<usize>,
    kind: ElementKind,
    shape: CellShape,
    vertices: Vec<f64>,
    elements: Vec<usize>,
    vertex_elem_ptr: Vec<usize>,
    vertex_elem: Vec<usize>,
    h: f64,
    quasi_uniformity: f64,
}

pub fn build_structured_mesh(
    domain: &Domain,
    cells_per_axis: &[usize],
    kind: ElementKind,
) -> Result<Mesh> {
    Mesh::structured(domain.clone(), cells_per_axis, kind)
}

pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    mesh.refined()
}

/// Kuhn paths: each permutation of the axes walks from corner 0 to the
/// opposite corner, one axis at a time.
fn kuhn_paths(dim: usize) -> Vec<Vec<usize>> {
    let perms: &[&[usize]] = if dim == 2 {
        &[&[0, 1], &[1, 0]]
    } else {
        &[
            &[0, 1, 2],
            &[0, 2, 1],
            &[1, 0, 2],
            &[1, 2, 0],
            &[2, 0, 1],
            &[2, 1, 0],
        ]
    };
    perms
        .iter()
        .map(|perm| {
            let mut corner = 0usize;
            let mut path = vec![0];
            for &axis in perm.iter() {
                corner |= 1 << axis;
                path.push(corner);
            }
            path
        })
        .collect()
}

impl Mesh {
    pub fn structured(domain: Domain, cells_per_axis: &[usize], kind: ElementKind) -> Result<Self> {
        let dim = domain.dim();
        if cells_per_axis.len() != dim {
            return Err(Error::invalid(format!(
                "expected {dim} cell counts, got {}",
                cells_per_axis.len()
            )));
        }
        if cells_per_axis.contains(&0) {
            return Err(Error::invalid("every axis needs at least one cell"));
        }
        let shape = CellShape::new(kind, dim)?;
        let cells = cells_per_axis.to_vec();
        let npts: Vec<usize> = cells.iter().map(|c| c + 1).collect();
        let spacing: Vec<f64> = (0..dim)
            .map(|k| domain.extent(k) / cells[k] as f64)
            .collect();

        let n_vertices: usize = npts.iter().product();
        let mut vertices = Vec::with_capacity(n_vertices * dim);
        for idx in 0..n_vertices {
            let mut rest = idx;
            for k in 0..dim {
                let i = rest % npts[k];
                rest /= npts[k];
                // exact at the upper boundary
                let x = if i == cells[k] {
                    domain.upper[k]
                } else {
                    domain.lower[k] + i as f64 * spacing[k]
                };
                vertices.push(x);
            }
        }

        let vertex_id = |corner: &[usize]| -> usize {
            let mut id = 0;
            for k in (0..dim).rev() {
                id = id * npts[k] + corner[k];
            }
            id
        };

        let n_cells: usize = cells.iter().product();
        let paths = kuhn_paths(dim);
        let nloc = shape.n_nodes();
        let mut elements = Vec::with_capacity(n_cells * nloc * paths.len());
        for c in 0..n_cells {
            let mut base = [0usize; 3];
            let mut rest = c;
            for k in 0..dim {
                base[k] = rest % cells[k];
                rest /= cells[k];
            }
            let corner = |bits: usize| -> usize {
                let mut p = base;
                for (k, pk) in p.iter_mut().enumerate().take(dim) {
                    *pk += bits >> k & 1;
                }
                vertex_id(&p[..dim])
            };
            match kind {
                ElementKind::Parallelotope => {
                    elements.extend((0..nloc).map(corner));
                }
                ElementKind::Simplex => {
                    for path in &paths {
                        let mut tet: Vec<usize> = path.iter().map(|&b| corner(b)).collect();
                        let sign = orientation(&vertices, dim, &tet);
                        if sign < 0.0 {
                            tet.swap(dim - 1, dim);
                        }
                        elements.extend(tet);
                    }
                }
            }
        }

        let mut mesh = Self {
            domain,
            cells,
            kind,
            shape,
            vertices,
            elements,
            vertex_elem_ptr: Vec::new(),
            vertex_elem: Vec::new(),
            h: 0.0,
            quasi_uniformity: 0.0,
        };
        mesh.build_adjacency();
        let (mut hmax, mut hmin) = (0.0f64, f64::INFINITY);
        for e in 0..mesh.n_elements() {
            mesh.element_map(e)?;
            let d = mesh.element_diameter(e);
            hmax = hmax.max(d);
            hmin = hmin.min(d);
        }
        mesh.h = hmax;
        mesh.quasi_uniformity = hmax / hmin;
        Ok(mesh)
    }

    fn build_adjacency(&mut self) {
        let nloc = self.nodes_per_element();
        let mut counts = vec![0usize; self.n_vertices() + 1];
        for &v in &self.elements {
            counts[v + 1] += 1;
        }
        for i in 0..self.n_vertices() {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut list = vec![0; self.elements.len()];
        for (slot, &v) in self.elements.iter().enumerate() {
            list[next[v]] = slot / nloc;
            next[v] += 1;
        }
        self.vertex_elem_ptr = counts;
        self.vertex_elem = list;
    }

    pub fn refined(&self) -> Result<Self> {
        let cells: Vec<usize> = self.cells.iter().map(|c| 2 * c).collect();
        Self::structured(self.domain.clone(), &cells, self.kind)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn shape(&self) -> CellShape {
        self.shape
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    /// Largest element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Ratio of the largest to the smallest element diameter.
    pub fn quasi_uniformity(&self) -> f64 {
        self.quasi_uniformity
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len() / self.dim()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / self.nodes_per_element()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.shape.n_nodes()
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.vertices[i * d..(i + 1) * d]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.nodes_per_element();
        &self.elements[e * n..(e + 1) * n]
    }

    /// Elements incident to vertex `v`, ascending.
    pub fn vertex_elements(&self, v: usize) -> &[usize] {
        &self.vertex_elem[self.vertex_elem_ptr[v]..self.vertex_elem_ptr[v + 1]]
    }

    pub fn element_map(&self, e: usize) -> Result<AffineMap> {
        let dim = self.dim();
        let nodes = self.element(e);
        let v0 = pad(self.vertex(nodes[0]));
        let mut jac = Matrix3::identity();
        match self.kind {
            ElementKind::Simplex => {
                for k in 0..dim {
                    let col = pad(self.vertex(nodes[k + 1])) - v0;
                    jac.set_column(k, &col);
                }
                AffineMap::new(dim, v0, jac)
            }
            ElementKind::Parallelotope => {
                // node 0 is the lower corner, node 2^d - 1 the upper one
                let v1 = pad(self.vertex(nodes[nodes.len() - 1]));
                let half = (v1 - v0) * 0.5;
                for k in 0..dim {
                    jac[(k, k)] = half[k];
                }
                AffineMap::new(dim, (v0 + v1) * 0.5, jac)
            }
        }
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        self.element_map(e)
            .map(|m| m.det() * self.shape.reference_volume())
            .unwrap_or(0.0)
    }

    pub fn element_diameter(&self, e: usize) -> f64 {
        let nodes = self.element(e);
        let mut diam = 0.0f64;
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                let dist = self
                    .vertex(i)
                    .iter()
                    .zip(self.vertex(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                diam = diam.max(dist);
            }
        }
        diam
    }

    /// Finds the element containing `x` and its reference coordinates.
    /// Points on shared faces resolve to the smallest element id.
    pub fn locate_point(&self, x: &[f64]) -> Result<(usize, [f64; 3])> {
        let dim = self.dim();
        if !self.domain.contains(x) {
            return Err(Error::OutOfDomain {
                index: None,
                point: x.to_vec(),
            });
        }
        let mut ranges = [(0usize, 0usize); 3];
        for k in 0..dim {
            let n = self.cells[k];
            let t = (x[k] - self.domain.lower[k]) / self.domain.extent(k) * n as f64;
            let eps = 1e-9;
            let lo = ((t - eps).floor().max(0.0) as usize).min(n - 1);
            let hi = ((t + eps).floor().max(0.0) as usize).min(n - 1);
            ranges[k] = (lo, hi);
        }
        let sub = self.elements_per_cell();
        let mut candidates: Vec<usize> = cartesian(&ranges[..dim])
            .iter()
            .map(|c| (0..dim).rev().fold(0, |acc, k| acc * self.cells[k] + c[k]))
            .collect();
        candidates.sort_unstable();
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for cell in candidates {
            for e in cell * sub..(cell + 1) * sub {
                let xi = self.element_map(e)?.to_reference(x);
                let violation = self.violation(&xi);
                if violation <= LOCATE_TOL {
                    return Ok((e, xi));
                }
                if best.as_ref().is_none_or(|b| violation < b.2) {
                    best = Some((e, xi, violation));
                }
            }
        }
        // inside the domain up to roundoff: take the nearest candidate
        best.map(|(e, xi, _)| (e, xi))
            .ok_or_else(|| Error::OutOfDomain {
                index: None,
                point: x.to_vec(),
            })
    }

    fn violation(&self, xi: &[f64; 3]) -> f64 {
        let d = self.dim();
        match self.kind {
            ElementKind::Simplex => {
                let mut v = (xi[..d].iter().sum::<f64>() - 1.0).max(0.0);
                for &c in &xi[..d] {
                    v = v.max(-c);
                }
                v
            }
            ElementKind::Parallelotope => xi[..d].iter().map(|c| c.abs() - 1.0).fold(0.0, f64::max),
        }
    }

    fn elements_per_cell(&self) -> usize {
        match (self.kind, self.dim()) {
            (ElementKind::Parallelotope, _) => 1,
            (ElementKind::Simplex, 2) => 2,
            (ElementKind::Simplex, _) => 6,
        }
    }

    /// Elements whose closure meets the closure of `e`.
    pub fn element_patch(&self, e: usize) -> Result<Patch> {
        if e >= self.n_elements() {
            return Err(Error::invalid(format!(
                "element id {e} out of range (mesh has {})",
                self.n_elements()
            )));
        }
        let mut members: Vec<usize> = self
            .element(e)
            .iter()
            .flat_map(|&v| self.vertex_elements(v).iter().copied())
            .collect();
        members.sort_unstable();
        members.dedup();
        Ok(Patch { center: e, members })
    }

    /// Measure of `supp φ_v`.
    pub fn support_volume(&self, v: usize) -> f64 {
        self.vertex_elements(v)
            .iter()
            .map(|&e| self.element_volume(e))
            .sum()
    }

    pub fn description(&self) -> MeshDescription {
        MeshDescription {
            dim: self.dim(),
            kind: self.kind,
            lower: self.domain.lower.clone(),
            upper: self.domain.upper.clone(),
            cells: self.cells.clone(),
            vertices: (0..self.n_vertices())
                .map(|i| self.vertex(i).to_vec())
                .collect(),
            elements: (0..self.n_elements())
                .map(|e| self.element(e).to_vec())
                .collect(),
        }
    }

    /// Rebuilds a mesh from its JSON description, checking that the stored
    /// vertices and connectivity match the structured grid they claim.
    pub fn from_description(desc: &MeshDescription) -> Result<Self> {
        let domain = Domain::new(desc.lower.clone(), desc.upper.clone())
            .map_err(|e| Error::Schema(format!("mesh domain: {e}")))?;
        if domain.dim() != desc.dim {
            return Err(Error::Schema(
                "mesh dimension does not match its domain".into(),
            ));
        }
        let mesh = Self::structured(domain, &desc.cells, desc.kind)
            .map_err(|e| Error::Schema(format!("mesh grid: {e}")))?;
        if desc.vertices.len() != mesh.n_vertices() || desc.elements.len() != mesh.n_elements() {
            return Err(Error::Schema(
                "mesh vertex or element count does not match its grid".into(),
            ));
        }
        let scale = (0..mesh.dim())
            .map(|k| mesh.domain.extent(k))
            .fold(0.0, f64::max);
        for (i, v) in desc.vertices.iter().enumerate() {
            if v.len() != mesh.dim()
                || v.iter()
                    .zip(mesh.vertex(i))
                    .any(|(a, b)| (a - b).abs() > 1e-12 * scale)
            {
                return Err(Error::Schema(format!("vertex {i} does not match the grid")));
            }
        }
        for (e, el) in desc.elements.iter().enumerate() {
            if el.as_slice() != mesh.element(e) {
                return Err(Error::Schema(format!(
                    "element {e} does not match the grid"
                )));
            }
        }
        Ok(mesh)
    }

    /// Legacy VTK ASCII unstructured grid, optionally with one point field.
    pub fn write_vtk<W: Write>(
        &self,
        mut out: W,
        point_data: Option<(&str, &[f64])>,
    ) -> std::io::Result<()> {
        let dim = self.dim();
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "fetps mesh")?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", self.n_vertices())?;
        for i in 0..self.n_vertices() {
            let v = self.vertex(i);
            let z = if dim == 3 { v[2] } else { 0.0 };
            writeln!(out, "{} {} {}", v[0], v[1], z)?;
        }
        let nloc = self.nodes_per_element();
        let (order, cell_type): (&[usize], u8) = match self.shape {
            CellShape::Triangle => (&[0, 1, 2], 5),
            CellShape::Tetrahedron => (&[0, 1, 2, 3], 10),
            CellShape::Quadrilateral => (&[0, 1, 3, 2], 9),
            CellShape::Hexahedron => (&[0, 1, 3, 2, 4, 5, 7, 6], 12),
        };
        writeln!(
            out,
            "CELLS {} {}",
            self.n_elements(),
            self.n_elements() * (nloc + 1)
        )?;
        for e in 0..self.n_elements() {
            let nodes = self.element(e);
            write!(out, "{nloc}")?;
            for &k in order {
                write!(out, " {}", nodes[k])?;
            }
            writeln!(out)?;
        }
        writeln!(out, "CELL_TYPES {}", self.n_elements())?;
        for _ in 0..self.n_elements() {
            writeln!(out, "{cell_type}")?;
        }
        if let Some((name, values)) = point_data {
            writeln!(out, "POINT_DATA {}", self.n_vertices())?;
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in values {
                writeln!(out, "{v}")?;
            }
        }
        Ok(())
    }
}

/// Orientation sign of a simplex given by vertex ids.
fn orientation(vertices: &[f64], dim: usize, nodes: &[usize]) -> f64 {
    let v = |i: usize| pad(&vertices[nodes[i] * dim..(nodes[i] + 1) * dim]);
    let mut jac = Matrix3::identity();
    for k in 0..dim {
        jac.set_column(k, &(v(k + 1) - v(0)));
    }
    jac.determinant()
}

fn cartesian(ranges: &[(usize, usize)]) -> Vec<[usize; 3]> {
    let mut out = vec![[0usize; 3]];
    for (k, &(lo, hi)) in ranges.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|p| {
                (lo..=hi).map(move |i| {
                    let mut q = p;
                    q[k] = i;
                    q
                })
            })
            .collect();
    }
    out
}

/// JSON form of a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDescription {
    pub dim: usize,
    pub kind: ElementKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
    pub vertices: Vec<Vec<f64>>,
    pub elements: Vec<Vec<usize>>,
}
