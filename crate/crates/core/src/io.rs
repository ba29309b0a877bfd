//! Point CSV files and seeded synthetic data.
//!
//! Files carry a header row `x,y,value` or `x,y,z,value`; query files may
//! omit the value column.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assembly::ScatteredData;
use crate::error::{Error, Result};
use crate::fields::{CatalogField, FieldKind, ScalarField};
use crate::mesh::Domain;

const COORDS: [&str; 3] = ["x", "y", "z"];

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_error(line, format!("malformed CSV: {other:?}")),
    }
}

/// Dimension and presence of a value column, read from the header.
fn parse_header(header: &csv::StringRecord, require_value: bool) -> Result<(usize, bool)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_value = names.last() == Some(&"value");
    let ncoord = names.len() - usize::from(has_value);
    let valid = (2..=3).contains(&ncoord) && names[..ncoord] == COORDS[..ncoord];
    if !valid || (require_value && !has_value) {
        let expect = if require_value {
            "x,y[,z],value"
        } else {
            "x,y[,z][,value]"
        };
        return Err(parse_error(
            1,
            format!("header must be {expect}, found '{}'", names.join(",")),
        ));
    }
    Ok((ncoord, has_value))
}

fn parse_field(raw: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_error(line, format!("column {column}: '{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(
            line,
            format!("column {column}: non-finite value"),
        ));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Reads sites and values.
pub fn read_points_csv<R: Read>(input: R) -> Result<ScatteredData> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() {
        return Err(parse_error(1, "missing header row"));
    }
    let (dim, _) = parse_header(&header, true)?;
    let mut points = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != dim + 1 {
            return Err(parse_error(
                line,
                format!("expected {} columns, found {}", dim + 1, rec.len()),
            ));
        }
        for k in 0..dim {
            points.push(parse_field(&rec[k], line, COORDS[k])?);
        }
        values.push(parse_field(&rec[dim], line, "value")?);
    }
    ScatteredData::new(dim, points, values)
}

/// Query points; `dim` is `None` for a completely empty input.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPoints {
    pub dim: Option<usize>,
    pub points: Vec<Vec<f64>>,
}

pub fn read_query_csv<R: Read>(input: R) -> Result<QueryPoints> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Ok(QueryPoints {
            dim: None,
            points: Vec::new(),
        });
    }
    let (dim, has_value) = parse_header(&header, false)?;
    let width = dim + usize::from(has_value);
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(parse_error(
                line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        points.push(
            (0..dim)
                .map(|k| parse_field(&rec[k], line, COORDS[k]))
                .collect::<Result<_>>()?,
        );
    }
    Ok(QueryPoints {
        dim: Some(dim),
        points,
    })
}

/// Writes `x,y[,z],value` with shortest round-trip number formatting.
pub fn write_points_csv<W: Write>(mut out: W, data: &ScatteredData) -> Result<()> {
    let d = data.dim();
    writeln!(out, "{},value", COORDS[..d].join(","))?;
    for (i, v) in data.values().iter().enumerate() {
        let coords: Vec<String> = data.point(i).iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{}", coords.join(","), v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthLayout {
    /// Independent uniform samples in the box.
    Uniform,
    /// Uniform samples along the main diagonal of the box; never affinely
    /// spanning.
    Diagonal,
}

impl std::str::FromStr for SynthLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SynthLayout::Uniform),
            "diagonal" => Ok(SynthLayout::Diagonal),
            other => Err(Error::invalid(format!(
                "unknown layout '{other}' (expected uniform or diagonal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub field: FieldKind,
    pub n: usize,
    pub seed: u64,
    pub domain: Domain,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise: f64,
    pub layout: SynthLayout,
}

/// Seeded samples of a catalog field.
pub fn synthesize(cfg: &SynthConfig) -> Result<ScatteredData> {
    let d = cfg.domain.dim();
    let field = CatalogField::new(cfg.field, d)?;
    if cfg.n < d + 1 {
        return Err(Error::invalid(format!(
            "need at least {} points in {d} dimensions, got {}",
            d + 1,
            cfg.n
        )));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::invalid(format!(
            "noise level must be non-negative, got {}",
            cfg.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise > 0.0 {
        Some(Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let lo = cfg.domain.lower();
    let mut points = Vec::with_capacity(cfg.n * d);
    let mut values = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: Vec<f64> = match cfg.layout {
            SynthLayout::Uniform => (0..d)
                .map(|k| lo[k] + rng.random::<f64>() * cfg.domain.extent(k))
                .collect(),
            SynthLayout::Diagonal => {
                let t: f64 = rng.random();
                (0..d).map(|k| lo[k] + t * cfg.domain.extent(k)).collect()
            }
        };
        let mut v = field.value(&x);
        if let Some(dist) = &noise {
            v += dist.sample(&mut rng);
        }
        points.extend_from_slice(&x);
        values.push(v);
    }
    ScatteredData::new(d, points, values)
}
