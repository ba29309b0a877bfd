//! Shared fixtures for the benchmarks.

use fetps::io::{synthesize, SynthConfig, SynthLayout};
use fetps::{Domain, ElementKind, FieldKind, Mesh, ScatteredData};

/// A unit-square simplex mesh with `cells²` cells and Franke samples at
/// roughly four points per cell.
pub fn workload(cells: usize) -> (Mesh, ScatteredData) {
    let domain = Domain::unit(2).expect("unit square");
    let mesh =
        Mesh::structured(domain.clone(), &[cells, cells], ElementKind::Simplex).expect("mesh");
    let data = synthesize(&SynthConfig {
        field: FieldKind::Franke,
        n: 4 * cells * cells,
        seed: 42,
        domain,
        noise: 0.01,
        layout: SynthLayout::Uniform,
    })
    .expect("samples");
    (mesh, data)
}
