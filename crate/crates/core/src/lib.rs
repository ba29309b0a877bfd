//! Thin plate spline smoothing of scattered data with a stabilized mixed
//! finite element method.
//!
//! The gradient of the smoother is carried as a separate unknown and tied
//! to the smoother by a Lagrange multiplier tested against a dual basis that
//! is biorthogonal to the nodal basis. The resulting Gram matrix is diagonal,
//! so gradient and multiplier condense out and only a sparse symmetric
//! positive definite system in the nodal values remains.
//!
//! ```
//! use fetps::{fit, Domain, ElementKind, FitConfig, Mesh, ScatteredData, SolverConfig};
//!
//! let mesh = Mesh::structured(Domain::unit(2)?, &[4, 4], ElementKind::Simplex)?;
//! let pts = vec![vec![0.1, 0.2], vec![0.8, 0.3], vec![0.4, 0.9], vec![0.6, 0.6]];
//! let data = ScatteredData::from_points(&pts, vec![1.0, 2.0, 0.5, 1.5])?;
//! let s = fit(&data, &mesh, FitConfig::new(1e-2)?, &SolverConfig::default())?;
//! let v = s.evaluate(&[vec![0.5, 0.5]])?;
//! assert!(v[0].is_finite());
//! # Ok::<(), fetps::Error>(())
//! ```

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod elements;
pub mod error;
pub mod fields;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod smoother;
pub mod sparse;
pub mod study;
pub mod system;

pub use assembly::{ScatteredData, SystemBlocks};
pub use elements::{make_element_pair, CellShape, ElementKind, ElementPair};
pub use error::{Error, Result};
pub use fields::{
    CatalogField, DifferentiableField, FeFunction, FieldKind, PiecewiseField, ScalarField,
};
pub use mesh::{build_structured_mesh, refine_uniform, Domain, Mesh, MeshDescription};
pub use smoother::{
    fit, functional_value, lagrange_interpolate, quasi_project, FitConfig, Smoother,
};
pub use sparse::CsrMatrix;
pub use study::{run_study, StudyColumn, StudyConfig, StudyRow, StudyTable};
pub use system::{
    condense, recover_auxiliary, solve_reduced, solve_saddle_dense, Preconditioner,
    ReducedOperator, SaddleWeights, SolutionTriple, SolverConfig,
};
