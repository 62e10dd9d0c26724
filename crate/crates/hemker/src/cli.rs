//! Configuration, batch sweeps, and deterministic emission of tables and
//! field dumps.
//!
//! Tables go out as two files: `<name>.csv` with the paper-style fixed
//! 4-decimal formatting for eyeball diffing, and `<name>.full.csv` with
//! full-precision values for tolerance-based comparison; the full file
//! round-trips exactly through [`parse_table_csv`]. Missing cells are the
//! explicit `NA` token, never a silent zero.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Deserialize;

use crate::error::{HemkerError, Result};
use crate::fields::CompositeSolution;
use crate::solver::SolverOptions;
use crate::verification::{
    fill_error_table, fill_two_mesh_table, ConvergenceTable, DiffRegion, RunPool,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutputKind {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    FieldDump,
    ErrorDump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelection {
    InitialOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub eps_max_exponent: i32,
    pub n_list: Vec<usize>,
    pub outer_radius: f64,
    pub delta: f64,
    pub rtol: f64,
    pub stages: StageSelection,
    pub outputs: BTreeSet<OutputKind>,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub grid_res: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eps_max_exponent: 20,
            n_list: vec![8, 16, 32, 64, 128, 256, 512],
            outer_radius: 4.0,
            delta: 0.05,
            rtol: 1e-10,
            stages: StageSelection::Full,
            outputs: BTreeSet::new(),
            out_dir: PathBuf::from("out"),
            threads: 0,
            grid_res: 128,
        }
    }
}

/// Command-line flags. Any flag that is also present in `--config` wins
/// over the file value.
#[derive(Debug, Parser)]
#[command(
    name = "hemker",
    about = "Shishkin-mesh solver and convergence harness for the Hemker benchmark"
)]
pub struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Largest j in the eps grid {2^-j, j = 0..=J}.
    #[arg(long)]
    pub eps_max_exponent: Option<i32>,
    /// Comma-separated mesh sizes (multiples of 8).
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Emit a benchmark table (1: sector orders, 2: initial orders,
    /// 3: patch orders, 4: corrected orders, 5: global errors). Repeatable.
    #[arg(long = "table")]
    pub tables: Vec<u8>,
    /// Dump the computed solution on a uniform grid, one file per eps.
    #[arg(long)]
    pub field_dump: bool,
    /// Dump the error surface against the finest run, one file per eps.
    #[arg(long)]
    pub error_dump: bool,
    /// Output directory.
    #[arg(long = "out")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (0 = automatic).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Solver residual tolerance.
    #[arg(long)]
    pub rtol: Option<f64>,
    /// Patch half-height scale.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Outer radius of the domain.
    #[arg(long = "R")]
    pub outer_radius: Option<f64>,
    /// "full" or "initial-only".
    #[arg(long)]
    pub stages: Option<String>,
    /// Resolution of field/error dumps (points per direction, >= 32).
    #[arg(long)]
    pub grid_res: Option<usize>,
}

/// TOML file schema; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    eps_max_exponent: Option<i32>,
    n_list: Option<Vec<usize>>,
    tables: Option<Vec<u8>>,
    field_dump: Option<bool>,
    error_dump: Option<bool>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    rtol: Option<f64>,
    delta: Option<f64>,
    outer_radius: Option<f64>,
    stages: Option<String>,
    grid_res: Option<usize>,
}

fn table_output(k: u8) -> Result<OutputKind> {
    Ok(match k {
        1 => OutputKind::Table1,
        2 => OutputKind::Table2,
        3 => OutputKind::Table3,
        4 => OutputKind::Table4,
        5 => OutputKind::Table5,
        other => {
            return Err(HemkerError::Config(format!(
                "table index must be 1..=5, got {other}"
            )))
        }
    })
}

fn parse_stages(s: &str) -> Result<StageSelection> {
    match s {
        "full" => Ok(StageSelection::Full),
        "initial-only" => Ok(StageSelection::InitialOnly),
        other => Err(HemkerError::Config(format!(
            "stages must be \"full\" or \"initial-only\", got \"{other}\""
        ))),
    }
}

/// Builds the validated configuration from flags plus an optional file.
/// A key set in both places takes the flag value and logs the override.
pub fn parse_config(cli: &Cli) -> Result<RunConfig> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| HemkerError::Config(e.to_string()))?
        }
        None => FileConfig::default(),
    };
    let mut cfg = RunConfig::default();

    macro_rules! pick {
        ($field:ident, $flag:expr, $file:expr) => {
            if let Some(v) = $file {
                cfg.$field = v;
            }
            if let Some(v) = $flag {
                if $file.is_some() {
                    eprintln!("config: flag overrides file for `{}`", stringify!($field));
                }
                cfg.$field = v;
            }
        };
    }
    pick!(eps_max_exponent, cli.eps_max_exponent, file.eps_max_exponent);
    pick!(n_list, cli.n_list.clone(), file.n_list.clone());
    pick!(out_dir, cli.out_dir.clone(), file.out_dir.clone());
    pick!(threads, cli.threads, file.threads);
    pick!(rtol, cli.rtol, file.rtol);
    pick!(delta, cli.delta, file.delta);
    pick!(outer_radius, cli.outer_radius, file.outer_radius);
    pick!(grid_res, cli.grid_res, file.grid_res);

    if let Some(s) = &file.stages {
        cfg.stages = parse_stages(s)?;
    }
    if let Some(s) = &cli.stages {
        if file.stages.is_some() {
            eprintln!("config: flag overrides file for `stages`");
        }
        cfg.stages = parse_stages(s)?;
    }

    let mut outputs = BTreeSet::new();
    for &k in file.tables.iter().flatten() {
        outputs.insert(table_output(k)?);
    }
    if !cli.tables.is_empty() {
        if file.tables.is_some() {
            eprintln!("config: flag overrides file for `tables`");
        }
        outputs.retain(|o| matches!(o, OutputKind::FieldDump | OutputKind::ErrorDump));
        for &k in &cli.tables {
            outputs.insert(table_output(k)?);
        }
    }
    if file.field_dump == Some(true) || cli.field_dump {
        outputs.insert(OutputKind::FieldDump);
    }
    if file.error_dump == Some(true) || cli.error_dump {
        outputs.insert(OutputKind::ErrorDump);
    }
    cfg.outputs = outputs;

    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    if cfg.eps_max_exponent < 0 {
        return Err(HemkerError::Config(
            "eps_max_exponent must be nonnegative".into(),
        ));
    }
    if cfg.n_list.is_empty() {
        return Err(HemkerError::Config("n_list must not be empty".into()));
    }
    for &n in &cfg.n_list {
        if n == 0 || n % 8 != 0 {
            return Err(HemkerError::Config(format!(
                "n_list entries must be positive multiples of 8, got {n}"
            )));
        }
    }
    if !cfg.n_list.windows(2).all(|w| w[1] > w[0]) {
        return Err(HemkerError::Config("n_list must be increasing".into()));
    }
    let order_tables = [
        OutputKind::Table1,
        OutputKind::Table2,
        OutputKind::Table3,
        OutputKind::Table4,
    ];
    if order_tables.iter().any(|t| cfg.outputs.contains(t))
        && !cfg.n_list.windows(2).all(|w| w[1] == 2 * w[0])
    {
        return Err(HemkerError::Config(
            "order tables require a strictly doubling n_list".into(),
        ));
    }
    let needs_corrected = [OutputKind::Table3, OutputKind::Table4, OutputKind::Table5];
    if cfg.stages == StageSelection::InitialOnly
        && needs_corrected.iter().any(|t| cfg.outputs.contains(t))
    {
        return Err(HemkerError::Config(
            "tables 3-5 need the corrected solution; stages = initial-only cannot produce them"
                .into(),
        ));
    }
    if cfg.outputs.contains(&OutputKind::Table5) {
        let max = *cfg.n_list.last().unwrap();
        if !cfg.n_list.iter().any(|&n| 4 * n <= max) {
            return Err(HemkerError::Config(
                "table 5 needs at least one N with 4N <= max(n_list) for the reference".into(),
            ));
        }
    }
    if (cfg.outputs.contains(&OutputKind::FieldDump)
        || cfg.outputs.contains(&OutputKind::ErrorDump))
        && cfg.grid_res < 32
    {
        return Err(HemkerError::Config(
            "grid_res must be at least 32 per direction".into(),
        ));
    }
    if !(cfg.rtol > 0.0) {
        return Err(HemkerError::Config("rtol must be positive".into()));
    }
    if !(cfg.delta > 0.0 && cfg.delta <= 1.0 / 6.0) {
        return Err(HemkerError::Config("delta must lie in (0, 1/6]".into()));
    }
    if !(cfg.outer_radius > 1.0) {
        return Err(HemkerError::Config("R must exceed 1".into()));
    }
    Ok(())
}

fn eps_label(j: i32) -> String {
    if j == 0 {
        "1".to_string()
    } else {
        format!("2^-{j}")
    }
}

fn parse_eps_label(s: &str) -> Result<i32> {
    if s == "1" || s == "2^-0" || s == "2^0" {
        return Ok(0);
    }
    s.strip_prefix("2^-")
        .and_then(|t| t.parse::<i32>().ok())
        .ok_or_else(|| HemkerError::Config(format!("bad eps label \"{s}\"")))
}

fn cell(value: Option<f64>, full: bool) -> String {
    match value {
        Some(v) if full => format!("{v:.17e}"),
        Some(v) => format!("{v:.4}"),
        None => "NA".to_string(),
    }
}

/// Renders a table as CSV. Order tables (`orders = true`) print the local
/// orders per eps row and close with the parameter-uniform row; difference
/// and error tables print the raw `D` entries.
fn render_table(t: &ConvergenceTable, orders: bool, full: bool) -> String {
    let mut out = String::new();
    out.push_str("eps");
    let cols: Vec<usize> = if orders {
        (0..t.n_list.len().saturating_sub(1)).collect()
    } else {
        (0..t.n_list.len()).collect()
    };
    for &k in &cols {
        let _ = write!(out, ",{}", t.n_list[k]);
    }
    out.push('\n');
    for (e, &j) in t.eps_exponents.iter().enumerate() {
        out.push_str(&eps_label(j));
        for &k in &cols {
            let v = if orders { t.p_local[e][k] } else { t.d[e][k] };
            let _ = write!(out, ",{}", cell(v, full));
        }
        out.push('\n');
    }
    if orders {
        out.push_str("p_uniform");
        for &k in &cols {
            let _ = write!(out, ",{}", cell(t.p_uniform[k], full));
        }
        out.push('\n');
    }
    out
}

/// Writes the fixed-precision table plus its full-precision sidecar.
/// An all-`NA` table still writes both files but reports an error so the
/// caller can exit nonzero.
pub fn emit_table(t: &ConvergenceTable, orders: bool, path: &Path) -> Result<()> {
    std::fs::write(path, render_table(t, orders, false))?;
    std::fs::write(sidecar_path(path), render_table(t, orders, true))?;
    let any = if orders {
        t.p_local.iter().flatten().any(Option::is_some)
    } else {
        t.d.iter().flatten().any(Option::is_some)
    };
    if !any {
        return Err(HemkerError::IncompleteTable(format!(
            "{} has no defined entries",
            path.display()
        )));
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    let base = path.with_extension("");
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("csv");
    p.clear();
    p.push(base.as_os_str());
    p.push(".full.");
    p.push(ext);
    PathBuf::from(p)
}

/// Parses a table CSV (either precision). Returns eps exponents, mesh
/// sizes, the matrix, and the p_uniform row if present.
#[allow(clippy::type_complexity)]
pub fn parse_table_csv(
    text: &str,
) -> Result<(Vec<i32>, Vec<usize>, Vec<Vec<Option<f64>>>, Option<Vec<Option<f64>>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HemkerError::Config("empty table file".into()))?;
    let mut n_list = Vec::new();
    for tok in header.split(',').skip(1) {
        n_list.push(
            tok.parse::<usize>()
                .map_err(|_| HemkerError::Config(format!("bad N header \"{tok}\"")))?,
        );
    }
    let mut eps = Vec::new();
    let mut rows = Vec::new();
    let mut p_uniform = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split(',');
        let label = toks.next().unwrap();
        let values: Result<Vec<Option<f64>>> = toks
            .map(|t| {
                if t == "NA" {
                    Ok(None)
                } else {
                    t.parse::<f64>()
                        .map(Some)
                        .map_err(|_| HemkerError::Config(format!("bad value \"{t}\"")))
                }
            })
            .collect();
        let values = values?;
        if values.len() != n_list.len() {
            return Err(HemkerError::Config("ragged table row".into()));
        }
        if label == "p_uniform" {
            p_uniform = Some(values);
        } else {
            eps.push(parse_eps_label(label)?);
            rows.push(values);
        }
    }
    Ok((eps, n_list, rows, p_uniform))
}

/// Out-of-domain sentinel used in field dumps.
pub const NA_TOKEN: &str = "NA";

/// Samples a composite on a uniform Cartesian grid over `[-R, R]^2` and
/// writes `x,y,value` lines. Points inside the unit disk emit 1 (the eval
/// does that), points outside the domain emit the `NA` sentinel.
pub fn emit_field(sol: &CompositeSolution, resolution: usize, path: &Path) -> Result<()> {
    if resolution < 32 {
        return Err(HemkerError::Config(
            "field dump resolution must be at least 32".into(),
        ));
    }
    let r = sol.params.outer_radius;
    let mut out = String::with_capacity(resolution * resolution * 24);
    out.push_str("x,y,value\n");
    for gj in 0..resolution {
        let y = -r + 2.0 * r * gj as f64 / (resolution - 1) as f64;
        for gi in 0..resolution {
            let x = -r + 2.0 * r * gi as f64 / (resolution - 1) as f64;
            match sol.eval(x, y) {
                Ok(v) => {
                    let _ = writeln!(out, "{x:.8},{y:.8},{v:.8}");
                }
                Err(_) => {
                    let _ = writeln!(out, "{x:.8},{y:.8},{NA_TOKEN}");
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Statistics of an error surface `|a - b|` on the dump grid.
#[derive(Debug, Clone, Copy)]
pub struct ErrorSurfaceStats {
    pub max: f64,
    pub argmax: (f64, f64),
    /// Median of the nonzero differences over the grid.
    pub median: f64,
}

/// Writes the error surface `|a - b|` like [`emit_field`] and returns its
/// statistics.
pub fn emit_error_field(
    a: &CompositeSolution,
    b: &CompositeSolution,
    resolution: usize,
    path: &Path,
) -> Result<ErrorSurfaceStats> {
    if resolution < 32 {
        return Err(HemkerError::Config(
            "error dump resolution must be at least 32".into(),
        ));
    }
    let r = a.params.outer_radius;
    let mut out = String::with_capacity(resolution * resolution * 24);
    out.push_str("x,y,value\n");
    let mut max = 0.0f64;
    let mut argmax = (0.0, 0.0);
    let mut diffs = Vec::new();
    for gj in 0..resolution {
        let y = -r + 2.0 * r * gj as f64 / (resolution - 1) as f64;
        for gi in 0..resolution {
            let x = -r + 2.0 * r * gi as f64 / (resolution - 1) as f64;
            match (a.eval(x, y), b.eval(x, y)) {
                (Ok(va), Ok(vb)) => {
                    let d = (va - vb).abs();
                    if d > max {
                        max = d;
                        argmax = (x, y);
                    }
                    diffs.push(d);
                    let _ = writeln!(out, "{x:.8},{y:.8},{d:.8}");
                }
                _ => {
                    let _ = writeln!(out, "{x:.8},{y:.8},{NA_TOKEN}");
                }
            }
        }
    }
    std::fs::write(path, out)?;
    diffs.retain(|&d| d > 0.0);
    diffs.sort_by(f64::total_cmp);
    let median = if diffs.is_empty() {
        0.0
    } else {
        diffs[diffs.len() / 2]
    };
    Ok(ErrorSurfaceStats { max, argmax, median })
}

/// Executes the configured sweep. Returns an exit code: 0 only if every
/// requested artifact was produced and every enabled property assertion
/// passed.
pub fn run(cfg: &RunConfig) -> i32 {
    if let Err(e) = std::fs::create_dir_all(&cfg.out_dir) {
        eprintln!("error: cannot create {}: {e}", cfg.out_dir.display());
        return 1;
    }
    if cfg.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    if cfg.outputs.is_empty() {
        eprintln!("nothing requested; pass --table, --field-dump or --error-dump");
        return 0;
    }
    let opts = SolverOptions {
        rtol: cfg.rtol,
        ..SolverOptions::default()
    };
    let pool = RunPool::new(opts).with_overrides(
        cfg.outer_radius,
        cfg.delta,
        cfg.stages == StageSelection::InitialOnly,
    );
    let eps: Vec<i32> = (0..=cfg.eps_max_exponent).collect();
    let mut failures = 0usize;

    let mut do_table = |kind: OutputKind, name: &str, region: DiffRegion, orders: bool| {
        if !cfg.outputs.contains(&kind) {
            return;
        }
        eprintln!("building {name} ...");
        let result = fill_two_mesh_table(&pool, &eps, &cfg.n_list, region)
            .and_then(|t| emit_table(&t, orders, &cfg.out_dir.join(name)));
        if let Err(e) = result {
            eprintln!("error: {name}: {e}");
            failures += 1;
        }
    };
    do_table(OutputKind::Table1, "table1.csv", DiffRegion::SectorLeft, true);
    do_table(OutputKind::Table2, "table2.csv", DiffRegion::Initial, true);
    do_table(OutputKind::Table3, "table3.csv", DiffRegion::Patch, true);
    do_table(OutputKind::Table4, "table4.csv", DiffRegion::Corrected, true);

    if cfg.outputs.contains(&OutputKind::Table5) {
        eprintln!("building table5.csv ...");
        let reference_n = *cfg.n_list.last().unwrap();
        let columns: Vec<usize> = cfg
            .n_list
            .iter()
            .copied()
            .filter(|&n| 4 * n <= reference_n)
            .collect();
        let result = fill_error_table(&pool, &eps, &columns, reference_n)
            .and_then(|t| emit_table(&t, false, &cfg.out_dir.join("table5.csv")));
        if let Err(e) = result {
            eprintln!("error: table5.csv: {e}");
            failures += 1;
        }
    }

    if cfg.outputs.contains(&OutputKind::FieldDump) {
        let n = *cfg.n_list.last().unwrap();
        for &j in &eps {
            let result = pool.solution(j, n).and_then(|sol| {
                let path = cfg.out_dir.join(format!("field_eps{j}_n{n}.csv"));
                emit_field(&sol, cfg.grid_res, &path)
            });
            if let Err(e) = result {
                eprintln!("error: field dump eps=2^-{j}: {e}");
                failures += 1;
            }
        }
    }

    if cfg.outputs.contains(&OutputKind::ErrorDump) {
        let reference_n = *cfg.n_list.last().unwrap();
        let dump_n = cfg
            .n_list
            .iter()
            .copied()
            .filter(|&n| 4 * n <= reference_n)
            .next_back();
        match dump_n {
            None => {
                eprintln!("error: error dump needs an N with 4N <= max(n_list)");
                failures += 1;
            }
            Some(n) => {
                for &j in &eps {
                    let result = pool.solution(j, n).and_then(|sol| {
                        let reference = pool.solution(j, reference_n)?;
                        let path = cfg
                            .out_dir
                            .join(format!("error_eps{j}_n{n}_ref{reference_n}.csv"));
                        emit_error_field(&sol, &reference, cfg.grid_res, &path).map(|stats| {
                            eprintln!(
                                "error surface eps=2^-{j}: max {:.4e} at ({:.3}, {:.3})",
                                stats.max, stats.argmax.0, stats.argmax.1
                            );
                        })
                    });
                    if let Err(e) = result {
                        eprintln!("error: error dump eps=2^-{j}: {e}");
                        failures += 1;
                    }
                }
            }
        }
    }

    // Property assertions over every run this sweep performed.
    let mut violations = 0usize;
    for run in pool.all_runs() {
        for d in &run.diagnostics {
            if d.residual_inf > cfg.rtol {
                eprintln!(
                    "assertion: stage {:?} residual {:.3e} above rtol",
                    d.stage, d.residual_inf
                );
                violations += 1;
            }
            if d.min_value < -1e-10 || d.max_value > 1.0 + 1e-10 {
                eprintln!(
                    "assertion: stage {:?} range [{:.3e}, {:.6}] outside [0, 1]",
                    d.stage, d.min_value, d.max_value
                );
                violations += 1;
            }
            if d.m_matrix_ok == Some(false) {
                eprintln!("assertion: stage {:?} lost the M-matrix sign pattern", d.stage);
                violations += 1;
            }
        }
    }
    if violations > 0 {
        eprintln!("{violations} property assertion(s) failed");
    }
    if failures > 0 {
        eprintln!("{failures} artifact(s) failed");
    }
    if failures + violations > 0 {
        1
    } else {
        0
    }
}

/// Clap-level entry used by the binary.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match parse_config(&cli) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
