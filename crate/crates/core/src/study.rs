//! Convergence studies over a family of uniformly refined meshes.
//!
//! The fitting column has no closed-form reference: it measures the energy
//! norm of the difference between fits on consecutive levels, integrated on
//! the finer mesh, and estimates orders from those differences.

use serde::{Deserialize, Serialize};

use crate::assembly::ScatteredData;
use crate::elements::{ElementKind, ElementPair};
use crate::error::{Error, Result};
use crate::fields::{
    CatalogField, Difference, DifferentiableField, FeFunction, FieldKind, PiecewiseField,
};
use crate::io::{synthesize, SynthConfig, SynthLayout};
use crate::mesh::{Domain, Mesh};
use crate::smoother::{
    energy_parts, fit, integrate, lagrange_interpolate, quasi_project, recover_gradient, FitConfig,
    Smoother, DEFAULT_NORM_DEGREE,
};
use crate::system::SolverConfig;

/// Degree used to integrate errors against analytic fields.
const ERROR_DEGREE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyColumn {
    /// `‖∇u − Q_h∇I_h u‖_{L²}`
    Superconvergence,
    /// `‖u − Q_h u‖_{L²}`
    QhL2,
    /// `|u − Q_h u|_{H¹}`
    QhH1,
    /// `‖u − I_h u‖_{L²}`
    InterpL2,
    /// Energy norm of the difference between fits on levels `l` and `l + 1`.
    FitEnergy,
}

impl StudyColumn {
    pub const ALL: [StudyColumn; 5] = [
        StudyColumn::Superconvergence,
        StudyColumn::QhL2,
        StudyColumn::QhH1,
        StudyColumn::InterpL2,
        StudyColumn::FitEnergy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyColumn::Superconvergence => "superconvergence",
            StudyColumn::QhL2 => "qh-l2",
            StudyColumn::QhH1 => "qh-h1",
            StudyColumn::InterpL2 => "interp-l2",
            StudyColumn::FitEnergy => "fit-energy",
        }
    }
}

impl std::str::FromStr for StudyColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyColumn::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown study column '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub field: FieldKind,
    pub kind: ElementKind,
    pub dim: usize,
    /// Cells per axis on the coarsest level.
    pub start_cells: usize,
    pub levels: usize,
    pub alpha: f64,
    pub n_points: usize,
    pub seed: u64,
    pub columns: Vec<StudyColumn>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::invalid(format!(
                "a study needs at least 3 levels, got {}",
                self.levels
            )));
        }
        if self.start_cells == 0 {
            return Err(Error::invalid(
                "the coarsest level needs at least one cell per axis",
            ));
        }
        if self.columns.is_empty() {
            return Err(Error::invalid("no study columns requested"));
        }
        CatalogField::new(self.field, self.dim)?;
        if self.columns.contains(&StudyColumn::FitEnergy) {
            FitConfig::new(self.alpha)?;
            if self.n_points < self.dim + 1 {
                return Err(Error::invalid(format!(
                    "fitting needs at least {} data points, got {}",
                    self.dim + 1,
                    self.n_points
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub level: usize,
    pub h: f64,
    /// One entry per requested column; `None` where undefined.
    pub errors: Vec<Option<f64>>,
    pub orders: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub config: StudyConfig,
    pub columns: Vec<StudyColumn>,
    pub rows: Vec<StudyRow>,
    pub note: String,
}

const NOTE: &str = "fit-energy compares fits on consecutive levels (row l holds the difference between levels l and l+1); its orders are self-referential estimates";

impl StudyTable {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["level".to_string(), "h".to_string()];
        for c in &self.columns {
            header.push(c.name().to_string());
            header.push(format!("{}-order", c.name()));
        }
        writeln!(out, "{}", header.join(","))?;
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for row in &self.rows {
            let mut cells = vec![row.level.to_string(), format!("{:e}", row.h)];
            for (e, o) in row.errors.iter().zip(&row.orders) {
                cells.push(fmt(e));
                cells.push(o.map(|x| format!("{x:.4}")).unwrap_or_default());
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Orders of one column, skipping undefined entries.
    pub fn orders(&self, column: StudyColumn) -> Vec<f64> {
        match self.columns.iter().position(|&c| c == column) {
            Some(j) => self.rows.iter().filter_map(|r| r.orders[j]).collect(),
            None => Vec::new(),
        }
    }

    pub fn errors(&self, column: StudyColumn) -> Vec<f64> {
        match self.columns.iter().position(|&c| c == column) {
            Some(j) => self.rows.iter().filter_map(|r| r.errors[j]).collect(),
            None => Vec::new(),
        }
    }
}

/// `‖∇u − Q_h∇I_h u‖_{L²}`.
pub fn superconvergence_error<F: DifferentiableField>(mesh: &Mesh, u: &F) -> Result<f64> {
    let d = mesh.dim();
    let pair = ElementPair::new(mesh.shape())?;
    let interp = lagrange_interpolate(mesh, u);
    let recovered = recover_gradient(mesh, &interp)?;
    let sig: Vec<FeFunction> = recovered
        .iter()
        .map(|c| FeFunction::new(mesh, &pair, c))
        .collect::<Result<_>>()?;
    let e2 = integrate(mesh, ERROR_DEGREE, |e, x| {
        let mut g = [0.0; 3];
        u.gradient(x, &mut g[..d]);
        sig.iter()
            .enumerate()
            .map(|(k, s)| (g[k] - s.value_on(e, x).expect("valid element")).powi(2))
            .sum()
    })?;
    Ok(e2.sqrt())
}

/// `(‖u − c‖_{L²}, |u − c|_{H¹})` for finite element coefficients `c`.
pub fn approximation_errors<F: DifferentiableField>(
    mesh: &Mesh,
    u: &F,
    coeffs: &[f64],
) -> Result<(f64, f64)> {
    let d = mesh.dim();
    let pair = ElementPair::new(mesh.shape())?;
    let v = FeFunction::new(mesh, &pair, coeffs)?;
    let l2 = integrate(mesh, ERROR_DEGREE, |e, x| {
        (u.value(x) - v.value_on(e, x).expect("valid element")).powi(2)
    })?;
    let h1 = integrate(mesh, ERROR_DEGREE, |e, x| {
        let mut gu = [0.0; 3];
        let mut gv = [0.0; 3];
        u.gradient(x, &mut gu[..d]);
        v.gradient_on(e, x, &mut gv[..d]).expect("valid element");
        (0..d).map(|k| (gu[k] - gv[k]).powi(2)).sum()
    })?;
    Ok((l2.sqrt(), h1.sqrt()))
}

/// Energy norm of `(u_c − u_f, σ_c − σ_f)` integrated on the finer mesh.
pub fn successive_difference(
    coarse: &Smoother,
    fine: &Smoother,
    sites: &ScatteredData,
) -> Result<f64> {
    let d = fine.mesh().dim();
    let uc = coarse.function();
    let uf = fine.function();
    let sc: Vec<FeFunction> = (0..d).map(|k| coarse.sigma_function(k)).collect();
    let sf: Vec<FeFunction> = (0..d).map(|k| fine.sigma_function(k)).collect();
    let du = Difference { a: &uc, b: &uf };
    let ds: Vec<Difference> = (0..d)
        .map(|k| Difference {
            a: &sc[k],
            b: &sf[k],
        })
        .collect();
    let ds_refs: Vec<&dyn PiecewiseField> = ds.iter().map(|x| x as &dyn PiecewiseField).collect();
    Ok(energy_parts(
        fine.mesh(),
        sites,
        fine.alpha(),
        &du,
        &ds_refs,
        DEFAULT_NORM_DEGREE,
    )?
    .norm())
}

fn order(prev: Option<f64>, cur: Option<f64>, h_prev: f64, h: f64) -> Option<f64> {
    match (prev, cur) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / (h_prev / h).ln()),
        _ => None,
    }
}

/// Runs the study level by level. On failure the rows completed so far are
/// returned together with the error.
pub fn run_study(cfg: &StudyConfig, solver: &SolverConfig) -> (StudyTable, Option<Error>) {
    let mut table = StudyTable {
        config: cfg.clone(),
        columns: cfg.columns.clone(),
        rows: Vec::new(),
        note: NOTE.into(),
    };
    if let Err(e) = cfg.validate() {
        return (table, Some(e));
    }
    let err = study_levels(cfg, solver, &mut table).err();
    (table, err)
}

fn study_levels(cfg: &StudyConfig, solver: &SolverConfig, table: &mut StudyTable) -> Result<()> {
    let field = CatalogField::new(cfg.field, cfg.dim)?;
    let domain = Domain::unit(cfg.dim)?;
    let wants_fit = cfg.columns.contains(&StudyColumn::FitEnergy);
    let sites = if wants_fit {
        let data = synthesize(&SynthConfig {
            field: cfg.field,
            n: cfg.n_points,
            seed: cfg.seed,
            domain: domain.clone(),
            noise: 0.0,
            layout: SynthLayout::Uniform,
        })?;
        data.check_admissible()?;
        Some(data)
    } else {
        None
    };
    let fit_cfg = if wants_fit {
        Some(FitConfig::new(cfg.alpha)?)
    } else {
        None
    };

    let mut mesh = Mesh::structured(domain, &vec![cfg.start_cells; cfg.dim], cfg.kind)?;
    let mut pending: Option<(StudyRow, Smoother)> = None;
    for level in 0..cfg.levels {
        if level > 0 {
            mesh = mesh.refined()?;
        }
        let mut errors = Vec::with_capacity(cfg.columns.len());
        let mut projection: Option<(f64, f64)> = None;
        for &col in &cfg.columns {
            let value = match col {
                StudyColumn::Superconvergence => Some(superconvergence_error(&mesh, &field)?),
                StudyColumn::QhL2 | StudyColumn::QhH1 => {
                    if projection.is_none() {
                        let q = quasi_project(&mesh, &field)?;
                        projection = Some(approximation_errors(&mesh, &field, &q)?);
                    }
                    let (l2, h1) = projection.expect("computed above");
                    Some(if col == StudyColumn::QhL2 { l2 } else { h1 })
                }
                StudyColumn::InterpL2 => {
                    let i = lagrange_interpolate(&mesh, &field);
                    Some(approximation_errors(&mesh, &field, &i)?.0)
                }
                // filled in once the next level is fitted
                StudyColumn::FitEnergy => None,
            };
            errors.push(value);
        }
        let row = StudyRow {
            level,
            h: mesh.h(),
            errors,
            orders: vec![None; cfg.columns.len()],
        };
        match (&sites, fit_cfg) {
            (Some(sites), Some(fc)) => {
                let smoother = match fit(sites, &mesh, fc, solver) {
                    Ok(s) => s,
                    Err(e) => {
                        if let Some((row, _)) = pending.take() {
                            push_row(table, row);
                        }
                        return Err(e);
                    }
                };
                if let Some((mut prev, coarse)) = pending.take() {
                    let j = cfg
                        .columns
                        .iter()
                        .position(|&c| c == StudyColumn::FitEnergy)
                        .expect("requested");
                    prev.errors[j] = Some(successive_difference(&coarse, &smoother, sites)?);
                    push_row(table, prev);
                }
                pending = Some((row, smoother));
            }
            _ => push_row(table, row),
        }
    }
    if let Some((row, _)) = pending {
        push_row(table, row);
    }
    Ok(())
}

fn push_row(table: &mut StudyTable, mut row: StudyRow) {
    if let Some(prev) = table.rows.last() {
        for j in 0..row.errors.len() {
            row.orders[j] = order(prev.errors[j], row.errors[j], prev.h, row.h);
        }
    }
    table.rows.push(row);
}
