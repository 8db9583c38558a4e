//! Command-line front end: `fit`, `estimate`, `simulate` and `gridsearch`.
//!
//! Each subcommand accepts an optional JSON config file; flags override file
//! values. Exit codes: 0 success, 2 malformed input, 3 numerical or
//! estimator failure, 4 configuration error, 5 excessive simulation failures.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::estimators::{Covariates, Dataset};
use crate::sim::{
    build_lookup_table, linear_grid, run_paired_suite, run_suite, GridSearchSpec, Method, PairedPeriodSpec, SimError,
    SimulationSpec, SuiteConfig, DEFAULT_ALPHA_LEVEL,
};
use crate::stats::fmt_sig6;
use crate::tail_model::{fit_mixture, qq_summary, MixtureParams};

/// Environment variable consulted when neither a flag nor the config file
/// sets a seed.
pub const SEED_ENV: &str = "HEFTY_SEED";
pub const DEFAULT_SEED: u64 = 0;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_FAILURES: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("estimation failed: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failures(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Failures(_) => EXIT_FAILURES,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let msg = e.to_string();
        match e {
            SimError::Config(_) => CliError::Config(msg),
            SimError::Tail(_) | SimError::Estimate(_) => CliError::Numeric(msg),
            SimError::ExcessiveFailures { .. } => CliError::Failures(msg),
            SimError::Csv(_) | SimError::Io(_) => CliError::Input(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hefty", version, about = "Treatment effect estimation for heavy-tailed metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the zero/exponential/Pareto mixture to a response column.
    Fit(FitArgs),
    /// Estimate the treatment effect on an experiment file.
    Estimate(EstimateArgs),
    /// Run an A/A or A/B replication suite.
    Simulate(SimulateArgs),
    /// Grid search the unified winsorization percentile.
    Gridsearch(GridArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with a `y` column.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Torso/tail cutoff C.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Where to write the fitted parameters as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    input: Option<PathBuf>,
    cutoff: Option<f64>,
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with header `unit_id,y,t[,x1,...]`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Method id, repeatable (e.g. `naive`, `winsor_union@0.99`, `dml_huber@5`).
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    /// Seed for the cross-fitting partition.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report lines to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateFile {
    input: Option<PathBuf>,
    #[serde(default)]
    methods: Vec<Method>,
    seed: Option<u64>,
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mixture parameters JSON file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub lift: Option<f64>,
    #[arg(long)]
    pub n_per_arm: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use the paired pre/post-period generator with this noise CV.
    #[arg(long)]
    pub noise_cv: Option<f64>,
    /// Suite report CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-replication p-values CSV.
    #[arg(long)]
    pub pvalues: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    params: Option<MixtureParams>,
    params_file: Option<PathBuf>,
    target_lift: Option<f64>,
    n_per_arm: Option<usize>,
    n_reps: Option<usize>,
    #[serde(default)]
    methods: Vec<Method>,
    seed: Option<u64>,
    alpha_level: Option<f64>,
    noise_cv: Option<f64>,
    output: Option<PathBuf>,
    pvalues: Option<PathBuf>,
    workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// True lift; repeat or comma-separate for a lookup table.
    #[arg(long = "lift", value_delimiter = ',')]
    pub lifts: Vec<f64>,
    /// Arm size; repeat or comma-separate for a lookup table.
    #[arg(long = "n-per-arm", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Percentile grid, comma-separated (default: 10 steps over [0.95, 0.999]).
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Curve CSV (`percentile,mse`).
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Lookup-table CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    params: Option<MixtureParams>,
    params_file: Option<PathBuf>,
    #[serde(default)]
    lifts: Vec<f64>,
    #[serde(default)]
    sizes: Vec<usize>,
    #[serde(default)]
    grid: Vec<f64>,
    n_reps: Option<usize>,
    seed: Option<u64>,
    curve: Option<PathBuf>,
    table: Option<PathBuf>,
    workers: Option<usize>,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing reports to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("hefty: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Gridsearch(a) => cmd_gridsearch(a, out),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

fn required<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing required setting `{name}`")))
}

/// Flag, then config file, then `HEFTY_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("input file {} does not exist", path.display())))
    }
}

fn check_output(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("output directory {} does not exist", parent.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))
}

fn io_err(e: io::Error) -> CliError {
    CliError::Input(format!("write failed: {e}"))
}

fn load_params(inline: Option<MixtureParams>, path: Option<&Path>) -> Result<MixtureParams, CliError> {
    match (path, inline) {
        (Some(p), _) => {
            check_input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(e.to_string()))?;
            MixtureParams::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
        (None, Some(params)) => params.validate().map(|_| params).map_err(|e| CliError::Config(e.to_string())),
        (None, None) => Err(CliError::Config("missing mixture parameters (`params` or `--params`)".into())),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    check_input(path)?;
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T, CliError> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse().map_err(|_| CliError::Input(format!("row {}: cannot parse {name} value `{raw}`", record_line(rec))))
}

/// Reads the `y` column of a response file.
pub fn read_response_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| CliError::Input(format!("{}: header has no `y` column", path.display())))?;
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Input(e.to_string()))?;
        let y: f64 = parse_field(&rec, col, "y")?;
        if !(y.is_finite() && y >= 0.0) {
            return Err(CliError::Input(format!("row {}: y = {y} must be finite and non-negative", record_line(&rec))));
        }
        ys.push(y);
    }
    Ok(ys)
}

/// Reads an experiment file with header `unit_id,y,t[,x1,...,xk]`.
pub fn read_experiment_csv(path: &Path) -> Result<Dataset, CliError> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[..3] != ["unit_id", "y", "t"] {
        return Err(CliError::Input(format!(
            "{}: header must start with unit_id,y,t (found {})",
            path.display(),
            names.join(",")
        )));
    }
    let cov_names: Vec<String> = names[3..].iter().map(|s| s.to_string()).collect();
    let k = cov_names.len();
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Input(e.to_string()))?;
        let line = record_line(&rec);
        let yi: f64 = parse_field(&rec, 1, "y")?;
        if !yi.is_finite() {
            return Err(CliError::Input(format!("row {line}: y must be finite")));
        }
        let ti = match rec.get(2) {
            Some("0") => 0u8,
            Some("1") => 1u8,
            other => {
                return Err(CliError::Input(format!("row {line}: t must be 0 or 1, got `{}`", other.unwrap_or(""))))
            }
        };
        for (j, name) in cov_names.iter().enumerate() {
            let v: f64 = parse_field(&rec, 3 + j, name)?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("row {line}: {name} must be finite")));
            }
            x.push(v);
        }
        y.push(yi);
        t.push(ti);
    }
    let covariates = (k > 0).then_some(Covariates { names: cov_names, values: x });
    Dataset::new(y, t, covariates).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub const ESTIMATE_HEADER: &str = "method,effect_abs,lift,std_err,z,p";

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file: FitFile = load_config(a.config.as_deref())?;
    let input = required(a.input.or(file.input), "input")?;
    let cutoff = required(a.cutoff.or(file.cutoff), "cutoff")?;
    let output = required(a.output.or(file.output), "output")?;
    check_input(&input)?;
    check_output(&output)?;

    let ys = read_response_csv(&input)?;
    let fit = fit_mixture(&ys, cutoff).map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut w = create(&output)?;
    writeln!(w, "{}", fit.params.to_json()).and_then(|_| w.flush()).map_err(io_err)?;

    let qq = qq_summary(&ys, &fit.params);
    writeln!(out, "segments: zero={} torso={} tail={}", fit.n_zero, fit.n_torso, fit.n_tail).map_err(io_err)?;
    for (name, seg) in [("torso", qq.torso), ("tail", qq.tail)] {
        writeln!(out, "qq {name}: max_abs_gap={} at_level={}", fmt_sig6(seg.max_abs_gap), fmt_sig6(seg.at_level))
            .map_err(io_err)?;
    }
    Ok(())
}

fn cmd_estimate(a: EstimateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file: EstimateFile = load_config(a.config.as_deref())?;
    let input = required(a.input.or(file.input), "input")?;
    let methods = if a.methods.is_empty() { file.methods } else { a.methods };
    if methods.is_empty() {
        return Err(CliError::Config("no methods requested".into()));
    }
    let seed = resolve_seed(a.seed, file.seed)?;
    let output = a.output.or(file.output);
    if let Some(o) = &output {
        check_output(o)?;
    }
    let data = read_experiment_csv(&input)?;
    if data.covariates().is_none() {
        if let Some(m) = methods.iter().find(|m| m.requires_covariates()) {
            return Err(CliError::Config(format!("method `{m}` needs covariate columns x1,...,xk in the input")));
        }
    }

    let mut lines = vec![ESTIMATE_HEADER.to_string()];
    for m in &methods {
        let r = m.estimate(&data, seed).map_err(|e| CliError::Numeric(format!("{m}: {e}")))?;
        lines.push(format!(
            "{},{},{},{},{},{}",
            r.method,
            fmt_sig6(r.effect_abs),
            fmt_sig6(r.lift),
            fmt_sig6(r.std_err),
            fmt_sig6(r.z_stat),
            fmt_sig6(r.p_value)
        ));
    }
    let text = lines.join("\n") + "\n";
    out.write_all(text.as_bytes()).map_err(io_err)?;
    if let Some(o) = output {
        let mut w = create(&o)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err)?;
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file: SimulateFile = load_config(a.config.as_deref())?;
    let params = load_params(file.params, a.params.as_deref().or(file.params_file.as_deref()))?;
    let methods = if a.methods.is_empty() { file.methods } else { a.methods };
    let suite = SuiteConfig {
        n_per_arm: required(a.n_per_arm.or(file.n_per_arm), "n_per_arm")?,
        n_reps: required(a.reps.or(file.n_reps), "n_reps")?,
        methods,
        master_seed: resolve_seed(a.seed, file.seed)?,
        alpha_level: a.alpha.or(file.alpha_level).unwrap_or(DEFAULT_ALPHA_LEVEL),
    };
    let target_lift = a.lift.or(file.target_lift).unwrap_or(0.0);
    let workers = a.workers.or(file.workers).unwrap_or(0);
    let output = a.output.or(file.output);
    let pvalues = a.pvalues.or(file.pvalues);
    for p in output.iter().chain(pvalues.iter()) {
        check_output(p)?;
    }

    let report = match a.noise_cv.or(file.noise_cv) {
        Some(noise_cv) => {
            let paired = PairedPeriodSpec { base_params: params, noise_cv, target_lift };
            run_paired_suite(&paired, &suite, workers)?
        }
        None => run_suite(&SimulationSpec { control_params: params, target_lift, suite }, workers)?,
    };

    match &output {
        Some(path) => {
            let mut w = create(path)?;
            report.write_csv(&mut w)?;
        }
        None => report.write_csv(&mut *out)?,
    }
    if let Some(path) = &pvalues {
        report.write_pvalues_csv(create(path)?)?;
    }
    Ok(())
}

fn cmd_gridsearch(a: GridArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file: GridFile = load_config(a.config.as_deref())?;
    let params = load_params(file.params, a.params.as_deref().or(file.params_file.as_deref()))?;
    let pick = |flag: Vec<f64>, cfg: Vec<f64>| if flag.is_empty() { cfg } else { flag };
    let mut lifts = pick(a.lifts, file.lifts);
    if lifts.is_empty() {
        lifts.push(0.0);
    }
    let sizes = if a.sizes.is_empty() { file.sizes } else { a.sizes };
    if sizes.is_empty() {
        return Err(CliError::Config("missing required setting `sizes` (--n-per-arm)".into()));
    }
    let mut grid = pick(a.grid, file.grid);
    if grid.is_empty() {
        grid = linear_grid(0.95, 0.999, 10);
    }
    let base = GridSearchSpec {
        control_params: params,
        target_lift: lifts[0],
        n_per_arm: sizes[0],
        grid,
        n_reps: required(a.reps.or(file.n_reps), "n_reps")?,
        master_seed: resolve_seed(a.seed, file.seed)?,
    };
    let workers = a.workers.or(file.workers).unwrap_or(0);
    let curve_path = a.curve.or(file.curve);
    let table_path = a.table.or(file.table);
    let multi = sizes.len() * lifts.len() > 1;
    if multi && table_path.is_none() {
        return Err(CliError::Config("multi-cell grid search needs a lookup-table path (--table)".into()));
    }
    for p in curve_path.iter().chain(table_path.iter()) {
        check_output(p)?;
    }

    let table = build_lookup_table(&sizes, &lifts, &base, workers)?;
    match &curve_path {
        Some(path) if multi => table.write_curves_csv(create(path)?)?,
        Some(path) => table.curves[0].write_csv(create(path)?)?,
        None if multi => table.write_curves_csv(&mut *out)?,
        None => table.curves[0].write_csv(&mut *out)?,
    }
    if let Some(path) = &table_path {
        table.write_csv(create(path)?)?;
    }
    for c in &table.cells {
        writeln!(
            out,
            "optimal n_per_arm={} lift={} percentile={} mse={}",
            c.n_per_arm,
            fmt_sig6(c.lift),
            fmt_sig6(c.optimal_percentile),
            fmt_sig6(c.min_mse)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Input(String::new()).exit_code(), 2);
        assert_eq!(CliError::Numeric(String::new()).exit_code(), 3);
        assert_eq!(CliError::Config(String::new()).exit_code(), 4);
        assert_eq!(CliError::Failures(String::new()).exit_code(), 5);
        let e: CliError =
            SimError::ExcessiveFailures { method: "m".into(), failures: 9, reps: 10, first_error: String::new() }
                .into();
        assert_eq!(e.exit_code(), 5);
    }

    #[test]
    fn usage_errors_are_config_errors() {
        let mut out = Vec::new();
        assert_eq!(run(["hefty", "bogus"], &mut out), EXIT_CONFIG);
        assert_eq!(run(["hefty", "estimate", "--method", "nope"], &mut out), EXIT_CONFIG);
        assert_eq!(run(["hefty", "estimate"], &mut out), EXIT_CONFIG);
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(3), Some(4)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(4)).unwrap(), 4);
    }
}
