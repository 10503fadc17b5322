//! The `sparsepmm` command-line program.
//!
//! Exit codes: 0 success, 1 usage or argument error, 2 input data or
//! configuration error, 3 numerical failure.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, SpectraDataset};
use crate::error::{Error, Result};
use crate::fitter::{self, FitReport};
use crate::penalty::Hyperparameters;
use crate::selection::{self, GridSpec, RoundRecord, SelectionTrace};
use crate::simulation::scenario::{self, write_outputs};
use crate::simulation::{self, BenchConfig, GroundTruth, LambdaPolicy, ScenarioConfig};

pub use config::{LambdaSpec, RunConfig};

/// Version of the JSON files written by the CLI.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "sparsepmm", version, about = "Sparse partial-membership mixture models for spectra")]
struct Cli {
    /// TOML file with dotted keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for grid points and replicates.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model at fixed or BIC-selected penalties.
    Fit(FitArgs),
    /// Select penalties by BIC and fit at the selected point.
    Tune(TuneArgs),
    /// Generate a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Run a replicated simulation scenario.
    Bench(BenchArgs),
    /// Score a fit against a ground-truth file.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Spectra CSV: id column, g column, one column per wavelength.
    #[arg(long, short)]
    input: PathBuf,
    /// Average this many adjacent wavelengths.
    #[arg(long)]
    aggregate: Option<usize>,
    /// One-row CSV with the pure-food mean spectrum.
    #[arg(long)]
    mu_pure: Option<PathBuf>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    g_column: Option<String>,
}

#[derive(Debug, Args, Default)]
struct GridArgs {
    /// Points per axis of the data-driven grid.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Lower end of the data-driven grid, relative to the critical scale.
    #[arg(long)]
    grid_lo: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Starting position along each axis, from 0 (smallest) to 1 (largest).
    #[arg(long)]
    start_fraction: Option<f64>,
    /// Explicit comma-separated grid for lambda_g.
    #[arg(long)]
    grid_g: Option<String>,
    #[arg(long)]
    grid_delta: Option<String>,
    #[arg(long)]
    grid_omega: Option<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `auto` or `g,delta,omega`.
    #[arg(long)]
    lambda: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// S1, S2 or S3; used together with --cell.
    #[arg(long)]
    scenario: Option<String>,
    /// Cell of the scenario, for example n250_p100.
    #[arg(long)]
    cell: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// mexican_hat or bspline.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    signal_scale: Option<f64>,
    #[arg(long)]
    support_fraction: Option<f64>,
    /// Comma-separated adulteration levels.
    #[arg(long)]
    g_levels: Option<String>,
    #[arg(long)]
    adulterated_fraction: Option<f64>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    /// Diagonal noise precision, one value or one per wavelength.
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cell labels; all cells when absent.
    #[arg(long)]
    cells: Option<String>,
    /// `auto` or a fixed `g,delta,omega` used for every replicate.
    #[arg(long)]
    lambda: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// Recompute replicates even when cached results exist.
    #[arg(long)]
    no_resume: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// fit.json written by `fit` or `tune`.
    #[arg(long)]
    fit: PathBuf,
    /// truth.json written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Also write the scores here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub schema_version: u32,
    pub sample_ids: Vec<String>,
    pub wavelengths: Vec<f64>,
    pub labeled: Vec<bool>,
    pub aggregate: usize,
    pub report: FitReport,
    pub selection: Option<SelectionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub rounds_used: usize,
    pub converged: bool,
    pub fits_performed: usize,
    pub initial_bic: Option<f64>,
    pub final_lambda: Hyperparameters,
    pub rounds: Vec<RoundRecord>,
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Configuration(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 2,
        Error::Numerical { .. } | Error::DegenerateSignal => 3,
    }
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            eprintln!("{}", error_json("usage", e.kind().as_str().unwrap_or("usage"), 1));
            return 1;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}

fn init_logging(level: Option<&str>) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if let Some(l) = level {
        b.parse_filters(l);
    }
    let _ = b.format_timestamp(None).target(env_logger::Target::Stderr).try_init();
}

fn execute(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.log_level.is_some() {
        cfg.log_level = cli.log_level.clone();
    }
    init_logging(cfg.log_level.as_deref());
    cfg.fit.validate()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;

    pool.install(|| match cli.command {
        Command::Fit(a) => cmd_fit(&mut cfg, a),
        Command::Tune(a) => cmd_tune(&mut cfg, a),
        Command::Simulate(a) => cmd_simulate(&mut cfg, a),
        Command::Bench(a) => cmd_bench(&mut cfg, a),
        Command::Score(a) => cmd_score(a),
    })
}

fn apply_data_args(cfg: &mut RunConfig, a: &DataArgs) {
    if let Some(k) = a.aggregate {
        cfg.data.aggregate = k;
    }
    if let Some(p) = &a.mu_pure {
        cfg.data.mu_pure = Some(p.clone());
    }
    if let Some(c) = &a.id_column {
        cfg.data.schema.id_column = c.clone();
    }
    if let Some(c) = &a.g_column {
        cfg.data.schema.g_column = c.clone();
    }
}

fn apply_grid_args(cfg: &mut RunConfig, a: &GridArgs) -> Result<()> {
    let g = &mut cfg.grid;
    if let Some(v) = a.grid_points {
        g.points = v;
    }
    if let Some(v) = a.grid_lo {
        g.lo = v;
    }
    if let Some(v) = a.grid_hi {
        g.hi = v;
    }
    if let Some(v) = a.max_rounds {
        g.max_rounds = v;
    }
    if let Some(v) = a.start_fraction {
        g.start_fraction = v;
    }
    if let Some(s) = &a.grid_g {
        g.g = Some(config::parse_list(s)?);
    }
    if let Some(s) = &a.grid_delta {
        g.delta = Some(config::parse_list(s)?);
    }
    if let Some(s) = &a.grid_omega {
        g.omega = Some(config::parse_list(s)?);
    }
    if !(0.0..=1.0).contains(&g.start_fraction) {
        return Err(Error::InvalidArgument(format!(
            "start fraction {} must lie in [0, 1]",
            g.start_fraction
        )));
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfig, input: &Path) -> Result<SpectraDataset> {
    let mut ds = data::load_csv(input, &cfg.data.schema)?;
    if let Some(path) = &cfg.data.mu_pure {
        let mu = data::load_mu_pure(path, ds.wavelengths())?;
        ds = ds.with_mu_pure(mu)?;
    }
    data::aggregate_adjacent(&ds, cfg.data.aggregate)
}

/// BIC search with the grid settings of `cfg`.
pub fn tune_dataset(cfg: &RunConfig, ds: &SpectraDataset) -> Result<SelectionTrace> {
    let mu = data::resolve_mu_pure(ds)?;
    let yc = data::center(ds)?;
    let grid = match cfg.grid.explicit()? {
        Some((g, d, o)) => GridSpec::new(g, d, o, cfg.grid.max_rounds)?,
        None => GridSpec::data_driven(
            &yc,
            mu.as_slice(),
            &cfg.fit,
            cfg.grid.points,
            cfg.grid.lo,
            cfg.grid.hi,
            cfg.grid.max_rounds,
        )?,
    };
    let lam0 = grid.start_at(cfg.grid.start_fraction);
    selection::tune_centered(&yc, mu.as_slice(), &grid, &cfg.fit, &lam0)
}

fn cmd_fit(cfg: &mut RunConfig, a: FitArgs) -> Result<i32> {
    apply_data_args(cfg, &a.data);
    apply_grid_args(cfg, &a.grid)?;
    if let Some(l) = &a.lambda {
        cfg.lambda = Some(l.parse()?);
    }
    let ds = load_dataset(cfg, &a.data.input)?;
    match cfg.lambda.unwrap_or(LambdaSpec::Auto) {
        LambdaSpec::Fixed(lam) => {
            let report = fitter::fit(&ds, &lam, &cfg.fit)?;
            write_fit_outputs(&a.out, &ds, cfg.data.aggregate, report, None)?;
        }
        LambdaSpec::Auto => {
            let trace = tune_dataset(cfg, &ds)?;
            write_selection(&a.out, &trace)?;
            let summary = summarize(&trace);
            write_fit_outputs(&a.out, &ds, cfg.data.aggregate, trace.best, Some(summary))?;
        }
    }
    Ok(0)
}

fn cmd_tune(cfg: &mut RunConfig, a: TuneArgs) -> Result<i32> {
    apply_data_args(cfg, &a.data);
    apply_grid_args(cfg, &a.grid)?;
    let ds = load_dataset(cfg, &a.data.input)?;
    let trace = tune_dataset(cfg, &ds)?;
    write_selection(&a.out, &trace)?;
    let summary = summarize(&trace);
    let lam = trace.final_lambda;
    write_fit_outputs(&a.out, &ds, cfg.data.aggregate, trace.best, Some(summary))?;
    emit(&format!(
        "selected lambda_g = {}, lambda_delta = {}, lambda_omega = {}\n",
        lam.lambda_g, lam.lambda_delta, lam.lambda_omega
    ));
    Ok(0)
}

fn summarize(trace: &SelectionTrace) -> SelectionSummary {
    SelectionSummary {
        rounds_used: trace.rounds_used,
        converged: trace.converged,
        fits_performed: trace.fits_performed,
        initial_bic: trace.initial_bic.is_finite().then_some(trace.initial_bic),
        final_lambda: trace.final_lambda,
        rounds: trace.rounds.clone(),
    }
}

fn write_selection(dir: &Path, trace: &SelectionTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("selection.csv"))?;
    w.write_record(["round", "axis", "lambda_g", "lambda_delta", "lambda_omega", "bic", "df", "error"])?;
    for e in &trace.evaluations {
        w.write_record([
            e.round.to_string(),
            e.axis.map(|x| format!("{x:?}").to_lowercase()).unwrap_or_else(|| "start".into()),
            e.lambda.lambda_g.to_string(),
            e.lambda.lambda_delta.to_string(),
            e.lambda.lambda_omega.to_string(),
            if e.bic.is_finite() { e.bic.to_string() } else { String::new() },
            e.df.map(|d| d.to_string()).unwrap_or_default(),
            e.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `fit.json`, `delta.csv`, `g.csv` and `omega_edges.csv` into `dir`.
pub fn write_fit_outputs(
    dir: &Path,
    ds: &SpectraDataset,
    aggregate: usize,
    report: FitReport,
    selection: Option<SelectionSummary>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let wl = ds.wavelengths();

    let mut w = csv::Writer::from_path(dir.join("delta.csv"))?;
    w.write_record(["wavelength", "delta", "is_zero"])?;
    for (x, d) in wl.iter().zip(report.delta()) {
        w.write_record([x.to_string(), d.to_string(), (*d == 0.0).to_string()])?;
    }
    w.flush()?;

    let labeled: Vec<bool> = ds.known_g().iter().map(Option::is_some).collect();
    let mut w = csv::Writer::from_path(dir.join("g.csv"))?;
    w.write_record(["sample_id", "g", "labeled"])?;
    for ((id, g), l) in ds.sample_ids().iter().zip(report.g()).zip(&labeled) {
        w.write_record([id.clone(), g.to_string(), l.to_string()])?;
    }
    w.flush()?;

    let omega = report.omega();
    let mut w = csv::Writer::from_path(dir.join("omega_edges.csv"))?;
    w.write_record(["i", "j", "wavelength_i", "wavelength_j", "value"])?;
    for j in 0..omega.ncols() {
        for i in 0..j {
            let v = omega[(i, j)];
            if v != 0.0 {
                w.write_record([
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    wl[i].to_string(),
                    wl[j].to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let file = FitFile {
        schema_version: SCHEMA_VERSION,
        sample_ids: ds.sample_ids().to_vec(),
        wavelengths: wl.to_vec(),
        labeled,
        aggregate,
        report,
        selection,
    };
    write_json(&dir.join("fit.json"), &file)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Scenario settings of `cfg`, with a named cell expanded.
pub fn scenario_config(cfg: &RunConfig) -> Result<ScenarioConfig> {
    let s = &cfg.simulation;
    let mut c = match &s.cell {
        Some(label) => s
            .scenario
            .cells(&s.base)
            .into_iter()
            .find(|c| &c.label == label)
            .map(|c| ScenarioConfig { seed: s.base.seed, ..c.config })
            .ok_or_else(|| Error::InvalidArgument(format!("scenario {} has no cell '{label}'", s.scenario)))?,
        None => s.base.clone(),
    };
    if let Some(v) = s.n {
        c.n = v;
    }
    if let Some(v) = s.p {
        c.p = v;
    }
    if let Some(v) = s.shape {
        c.shape = v;
    }
    if let Some(v) = s.signal_scale {
        c.signal_scale = v;
    }
    if let Some(v) = &s.g_levels {
        c.g_levels = v.clone();
    }
    c.validate()?;
    Ok(c)
}

fn cmd_simulate(cfg: &mut RunConfig, a: SimulateArgs) -> Result<i32> {
    let s = &mut cfg.simulation;
    if let Some(v) = &a.scenario {
        s.scenario = v.parse()?;
    }
    if a.cell.is_some() {
        s.cell = a.cell.clone();
    }
    if a.n.is_some() {
        s.n = a.n;
    }
    if a.p.is_some() {
        s.p = a.p;
    }
    if let Some(v) = &a.shape {
        s.shape = Some(config::parse_shape(v, a.support_fraction)?);
    } else if let Some(f) = a.support_fraction {
        s.shape = Some(simulation::DeltaShape::Bspline { support_fraction: f });
    }
    if a.signal_scale.is_some() {
        s.signal_scale = a.signal_scale;
    }
    if let Some(v) = &a.g_levels {
        s.g_levels = Some(config::parse_list(v)?);
    }
    if let Some(v) = a.adulterated_fraction {
        s.base.adulterated_fraction = v;
    }
    if let Some(v) = a.labeled_fraction {
        s.base.labeled_fraction = v;
    }
    if let Some(v) = &a.omega {
        s.base.omega_diag = config::parse_list(v)?;
    }
    if let Some(v) = a.seed {
        s.base.seed = v;
    }
    let sc = scenario_config(cfg)?;
    let (ds, truth) = simulation::generate(&sc)?;
    fs::create_dir_all(&a.out)?;
    ds.write_csv(&cfg.data.schema, fs::File::create(a.out.join("data.csv"))?)?;
    let mu = data::resolve_mu_pure(&ds)?;
    data::write_mu_pure(&mu, ds.wavelengths(), fs::File::create(a.out.join("mu_pure.csv"))?)?;
    write_json(
        &a.out.join("truth.json"),
        &TruthFile {
            schema_version: SCHEMA_VERSION,
            config: sc,
            truth,
        },
    )?;
    Ok(0)
}

const CACHE_MANIFEST: &str = "bench.json";

/// Clears cached replicates produced under different settings.
fn prepare_cache(dir: &Path, bench: &BenchConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join(CACHE_MANIFEST);
    let current = serde_json::to_string_pretty(bench)?;
    let stale = match fs::read_to_string(&manifest) {
        Ok(old) => old != current,
        Err(_) => true,
    };
    if stale {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.contains("_r") && name.ends_with(".json") && name != CACHE_MANIFEST {
                fs::remove_file(&path)?;
            }
        }
        fs::write(&manifest, current)?;
    }
    Ok(())
}

fn cmd_bench(cfg: &mut RunConfig, a: BenchArgs) -> Result<i32> {
    if let Some(v) = &a.scenario {
        cfg.simulation.scenario = v.parse()?;
    }
    if let Some(v) = a.replicates {
        cfg.bench.replicates = v;
    }
    if let Some(v) = a.seed {
        cfg.bench.seed = v;
    }
    if let Some(v) = &a.cells {
        cfg.bench.cells = v.split(',').map(|t| t.trim().to_owned()).filter(|t| !t.is_empty()).collect();
    }
    if let Some(l) = &a.lambda {
        cfg.lambda = Some(l.parse()?);
    }
    if a.no_resume {
        cfg.bench.resume = false;
    }
    apply_grid_args(cfg, &a.grid)?;
    if cfg.grid.explicit()?.is_some() {
        return Err(Error::InvalidArgument(
            "explicit grids apply to fit and tune; bench builds a grid per replicate".into(),
        ));
    }
    if cfg.bench.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }

    let mut bench = BenchConfig::new(
        cfg.simulation.scenario,
        &cfg.simulation.base,
        cfg.bench.replicates,
        cfg.bench.seed,
    );
    if !cfg.bench.cells.is_empty() {
        bench.retain_cells(&cfg.bench.cells)?;
    }
    bench.fit = cfg.fit;
    bench.lambda = match cfg.lambda.unwrap_or(LambdaSpec::Auto) {
        LambdaSpec::Fixed(lambda) => LambdaPolicy::Fixed { lambda },
        LambdaSpec::Auto => cfg.grid.policy(),
    };

    let cache = a.out.join("cache");
    let cache_dir = if cfg.bench.resume {
        prepare_cache(&cache, &bench)?;
        Some(cache.as_path())
    } else {
        None
    };
    let results = scenario::run_scenario(&bench, cache_dir)?;
    write_outputs(&results, &a.out)?;
    emit(&scenario::format_table(&results));
    let failed = results.replicates.iter().filter(|r| !r.succeeded()).count();
    if failed > 0 {
        eprintln!("{failed} of {} replicates failed", results.replicates.len());
    }
    Ok(if results.success_rate() >= 0.8 { 0 } else { 3 })
}

fn cmd_score(a: ScoreArgs) -> Result<i32> {
    let fit: FitFile = serde_json::from_str(&fs::read_to_string(&a.fit)?)?;
    let truth: TruthFile = serde_json::from_str(&fs::read_to_string(&a.truth)?)?;
    if fit.report.g().len() != truth.truth.g_true.len() || fit.report.p() != truth.truth.delta_true.len() {
        return Err(Error::Validation(format!(
            "fit has n = {}, p = {} but truth has n = {}, p = {}",
            fit.report.g().len(),
            fit.report.p(),
            truth.truth.g_true.len(),
            truth.truth.delta_true.len()
        )));
    }
    let metrics = scenario::score(&fit.report, &truth.truth)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    emit(&format!("{text}\n"));
    if let Some(out) = &a.out {
        write_json(out, &metrics)?;
    }
    Ok(0)
}
