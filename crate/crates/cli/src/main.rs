//! `fetps` command-line front end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fetps::assembly::SystemBlocks;
use fetps::io::{
    read_points_csv, read_query_csv, synthesize, write_points_csv, SynthConfig, SynthLayout,
};
use fetps::smoother::fit_blocks;
use fetps::{
    condense, functional_value, run_study, Domain, ElementKind, Error, FieldKind, FitConfig, Mesh,
    Preconditioner, ScatteredData, Smoother, SolverConfig, StudyColumn, StudyConfig, StudyTable,
};

#[derive(Parser)]
#[command(
    name = "fetps",
    version,
    about = "Thin plate spline smoothing with mixed finite elements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a smoother to a points CSV and save it as JSON.
    Fit(FitArgs),
    /// Evaluate a saved smoother and its recovered gradient at query points.
    Eval(EvalArgs),
    /// Write seeded samples of a catalog field as a points CSV.
    Synth(SynthArgs),
    /// Run a refinement study and report errors with estimated orders.
    Study(StudyArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Relative residual tolerance of the conjugate gradient solver.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Iteration cap (default: 10 times the number of unknowns).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Preconditioner: jacobi or none.
    #[arg(long, default_value = "jacobi")]
    preconditioner: Preconditioner,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, Error> {
        let cfg = SolverConfig {
            tolerance: self.tol,
            max_iterations: self.max_iter,
            preconditioner: self.preconditioner,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Points CSV with header x,y[,z],value.
    #[arg(long)]
    input: PathBuf,
    /// Box as lower then upper corner, e.g. 0,0,1,1 (default: bounding box of the data).
    #[arg(long)]
    domain: Option<String>,
    /// Cells per axis, one value or one per axis.
    #[arg(long, default_value = "32")]
    cells: String,
    /// Element kind: simplex or parallelotope.
    #[arg(long, default_value = "simplex")]
    kind: ElementKind,
    /// Smoothing parameter.
    #[arg(long)]
    alpha: f64,
    /// Output smoother JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the mesh with the fitted nodal values as legacy VTK.
    #[arg(long)]
    vtk: Option<PathBuf>,
    /// Write the assembled matrices in MatrixMarket format into this directory.
    #[arg(long)]
    dump_matrices: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Smoother JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Query CSV with header x,y[,z] (a value column is ignored).
    #[arg(long)]
    input: PathBuf,
    /// Output CSV: coordinates, value and recovered gradient.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Catalog field: linear, quadratic, sin-product, gaussian-bump or franke.
    #[arg(long)]
    field: String,
    /// Number of points.
    #[arg(long, short = 'n')]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Box as lower then upper corner (default: unit box of --dim).
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Site layout: uniform or diagonal.
    #[arg(long, default_value = "uniform")]
    layout: SynthLayout,
    /// Output points CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    field: String,
    #[arg(long, default_value = "simplex")]
    kind: ElementKind,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Cells per axis on the coarsest level.
    #[arg(long, default_value_t = 8)]
    start_cells: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
    /// Data sites for the fit-energy column.
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated columns: superconvergence, qh-l2, qh-h1, interp-l2, fit-energy.
    #[arg(long, default_value = "superconvergence,qh-l2,qh-h1")]
    columns: String,
    /// Write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

/// A failure with its exit code and JSON form.
struct Failure {
    code: u8,
    body: Value,
}

impl Failure {
    fn usage(message: String) -> Self {
        Self {
            code: 2,
            body: json!({ "kind": "usage", "message": message }),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::InadmissibleData(_) => 2,
        Error::OutOfDomain { .. } => 3,
        Error::NoConvergence { .. }
        | Error::Singular(_)
        | Error::Consistency(_)
        | Error::InvalidState(_)
        | Error::Assembly(_)
        | Error::TooLarge { .. } => 4,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
        match &e {
            Error::Parse { line, .. } => body["line"] = json!(line),
            Error::OutOfDomain { index, point } => {
                body["indices"] = json!(index.iter().collect::<Vec<_>>());
                body["point"] = json!(point);
            }
            Error::NoConvergence {
                iterations,
                residual,
            } => {
                body["iterations"] = json!(iterations);
                body["residual"] = json!(residual);
            }
            _ => {}
        }
        Self {
            code: exit_code(&e),
            body,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CmdResult = Result<Value, Failure>;

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::invalid(format!("{what}: cannot parse '{s}'")))
        })
        .collect()
}

fn parse_domain(raw: &str) -> Result<Domain, Error> {
    let v: Vec<f64> = parse_list(raw, "--domain")?;
    if v.len() != 4 && v.len() != 6 {
        return Err(Error::invalid(format!(
            "--domain needs 4 (2D) or 6 (3D) numbers, got {}",
            v.len()
        )));
    }
    let d = v.len() / 2;
    Domain::new(v[..d].to_vec(), v[d..].to_vec())
}

fn parse_cells(raw: &str, dim: usize) -> Result<Vec<usize>, Error> {
    let v: Vec<usize> = parse_list(raw, "--cells")?;
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v),
        n => Err(Error::invalid(format!(
            "--cells has {n} entries for a {dim}D domain"
        ))),
    }
}

fn bounding_box(data: &ScatteredData) -> Result<Domain, Error> {
    let d = data.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in data.points() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Domain::new(lo, hi)
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn dump_matrices(
    dir: &Path,
    blocks: &SystemBlocks,
    s: &fetps::ReducedOperator,
) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let put = |name: String, m: &fetps::CsrMatrix| -> Result<(), Error> {
        let mut out = create(&dir.join(format!("{name}.mtx")))?;
        m.write_matrix_market(&mut out)?;
        out.flush()?;
        Ok(())
    };
    put("K".into(), &blocks.k)?;
    put("M".into(), &blocks.mass)?;
    put("D".into(), &fetps::CsrMatrix::from_diagonal(&blocks.gram))?;
    for k in 0..blocks.dim {
        put(format!("B{}", k + 1), &blocks.b[k])?;
        put(format!("W{}", k + 1), &blocks.w[k])?;
    }
    put("P".into(), &blocks.p)?;
    put("R".into(), &blocks.r)?;
    put("S".into(), s.matrix())?;
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> CmdResult {
    let data = read_points_csv(open(&a.input)?)?;
    let domain = match &a.domain {
        Some(raw) => parse_domain(raw)?,
        None => bounding_box(&data)?,
    };
    if domain.dim() != data.dim() {
        return Err(Error::invalid(format!(
            "domain is {}D but the data are {}D",
            domain.dim(),
            data.dim()
        ))
        .into());
    }
    let cells = parse_cells(&a.cells, domain.dim())?;
    let mesh = Mesh::structured(domain, &cells, a.kind)?;
    let cfg = FitConfig::new(a.alpha)?;
    let solver = a.solver.config()?;
    data.check_admissible()?;
    let blocks = SystemBlocks::assemble(&mesh, &data)?;
    if let Some(dir) = &a.dump_matrices {
        dump_matrices(dir, &blocks, &condense(&blocks, cfg.weights()?)?)?;
    }
    let s = fit_blocks(&mesh, &blocks, cfg, &solver)?;
    s.save(&a.out)?;
    if let Some(path) = &a.vtk {
        let mut out = create(path)?;
        mesh.write_vtk(&mut out, Some(("u", s.coefficients())))?;
        out.flush()?;
    }
    let functional = functional_value(&s, &data)?;
    let z = data.values();
    let self_check = if z.iter().all(|&v| v == z[0]) {
        let dev = s
            .coefficients()
            .iter()
            .fold(0.0f64, |m, u| m.max((u - z[0]).abs()));
        json!({ "constant_data": true, "max_abs_deviation": dev })
    } else {
        json!({ "constant_data": false, "max_abs_deviation": null })
    };
    let diag = s.diagnostics();
    eprintln!(
        "fit: {} points, {} nodes, {} elements ({})",
        data.len(),
        mesh.n_vertices(),
        mesh.n_elements(),
        a.kind
    );
    eprintln!("  alpha               {:e}", a.alpha);
    eprintln!("  iterations          {}", diag.iterations);
    eprintln!("  relative residual   {:e}", diag.relative_residual);
    eprintln!("  functional          {:e}", functional);
    eprintln!("  model               {}", a.out.display());
    Ok(json!({
        "command": "fit",
        "model": a.out.display().to_string(),
        "n_points": data.len(),
        "n_nodes": mesh.n_vertices(),
        "n_elements": mesh.n_elements(),
        "h": mesh.h(),
        "alpha": a.alpha,
        "iterations": diag.iterations,
        "relative_residual": diag.relative_residual,
        "functional": functional,
        "self_check": self_check,
    }))
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let model = std::fs::read_to_string(&a.model).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", a.model.display()),
        ))
    })?;
    let s = Smoother::from_json(&model)?;
    let query = read_query_csv(open(&a.input)?)?;
    let mut out = create(&a.out)?;
    let Some(dim) = query.dim else {
        out.flush()?;
        eprintln!("eval: empty query file");
        return Ok(
            json!({ "command": "eval", "points": 0, "output": a.out.display().to_string() }),
        );
    };
    let d = s.mesh().dim();
    if dim != d {
        return Err(
            Error::invalid(format!("query points are {dim}D but the model is {d}D")).into(),
        );
    }
    let outside: Vec<usize> = query
        .points
        .iter()
        .enumerate()
        .filter(|(_, x)| !s.mesh().domain().contains(x))
        .map(|(i, _)| i)
        .collect();
    if !outside.is_empty() {
        return Err(Failure {
            code: 3,
            body: json!({
                "kind": "out-of-domain",
                "message": format!("{} query point(s) lie outside the domain", outside.len()),
                "indices": outside,
            }),
        });
    }
    let values = s.evaluate(&query.points)?;
    let grads = s.evaluate_gradient(&query.points)?;
    let axes = ["x", "y", "z"];
    let mut header: Vec<String> = axes[..d].iter().map(|s| s.to_string()).collect();
    header.push("value".into());
    header.extend(axes[..d].iter().map(|s| format!("grad_{s}")));
    writeln!(out, "{}", header.join(","))?;
    for ((x, v), g) in query.points.iter().zip(&values).zip(&grads) {
        let mut cells: Vec<String> = x.iter().map(f64::to_string).collect();
        cells.push(v.to_string());
        cells.extend(g.iter().map(f64::to_string));
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    eprintln!("eval: {} points -> {}", values.len(), a.out.display());
    Ok(json!({ "command": "eval", "points": values.len(), "output": a.out.display().to_string() }))
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let field: FieldKind = a.field.parse()?;
    let domain = match &a.domain {
        Some(raw) => parse_domain(raw)?,
        None => Domain::unit(a.dim)?,
    };
    let data = synthesize(&SynthConfig {
        field,
        n: a.n,
        seed: a.seed,
        domain,
        noise: a.noise,
        layout: a.layout,
    })?;
    let mut out = create(&a.out)?;
    write_points_csv(&mut out, &data)?;
    out.flush()?;
    let spanning = data.is_affinely_spanning();
    let mut summary = json!({
        "command": "synth",
        "field": field.name(),
        "points": data.len(),
        "seed": a.seed,
        "output": a.out.display().to_string(),
        "affinely_spanning": spanning,
    });
    if !spanning {
        let msg = format!(
            "the {} sites do not contain {} affinely independent points; fitting them will fail",
            data.len(),
            data.dim() + 1
        );
        eprintln!("warning: {msg}");
        summary["warning"] = json!(msg);
    }
    eprintln!(
        "synth: {} samples of {} -> {}",
        data.len(),
        field,
        a.out.display()
    );
    Ok(summary)
}

fn print_table(t: &StudyTable) {
    let mut head = format!("{:>5} {:>11}", "level", "h");
    for c in &t.columns {
        head += &format!(" {:>17} {:>6}", c.name(), "order");
    }
    eprintln!("{head}");
    for r in &t.rows {
        let mut line = format!("{:>5} {:>11.4e}", r.level, r.h);
        for (e, o) in r.errors.iter().zip(&r.orders) {
            let e = e.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
            let o = o.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            line += &format!(" {e:>17} {o:>6}");
        }
        eprintln!("{line}");
    }
    if t.columns.contains(&StudyColumn::FitEnergy) {
        eprintln!("note: {}", t.note);
    }
}

fn write_study(a: &StudyArgs, table: &StudyTable) -> Result<(), Error> {
    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        table.write_csv(&mut out)?;
        out.flush()?;
    }
    if let Some(path) = &a.json {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, table)?;
        writeln!(out)?;
        out.flush()?;
    }
    Ok(())
}

fn cmd_study(a: &StudyArgs) -> CmdResult {
    let cfg = StudyConfig {
        field: a.field.parse()?,
        kind: a.kind,
        dim: a.dim,
        start_cells: a.start_cells,
        levels: a.levels,
        alpha: a.alpha,
        n_points: a.points,
        seed: a.seed,
        columns: parse_list(&a.columns, "--columns")?,
    };
    let solver = a.solver.config()?;
    cfg.validate()?;
    let (table, err) = run_study(&cfg, &solver);
    print_table(&table);
    write_study(a, &table)?;
    match err {
        None => Ok(json!({ "command": "study", "table": table })),
        Some(e) => {
            let mut f = Failure::from(e);
            f.body["partial_table"] = serde_json::to_value(&table).map_err(Error::from)?;
            Err(f)
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("FETPS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::invalid(format!(
            "FETPS_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot configure thread pool: {e}")))
}

fn run(cli: &Cli) -> CmdResult {
    configure_threads()?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Study(a) => cmd_study(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let f = Failure::usage(e.kind().to_string());
            println!("{}", json!({ "error": f.body }));
            return ExitCode::from(f.code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!(
                "error: {}",
                f.body["message"].as_str().unwrap_or("unknown failure")
            );
            println!("{}", json!({ "error": f.body }));
            ExitCode::from(f.code)
        }
    }
}
