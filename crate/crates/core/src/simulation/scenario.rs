//! Replicated simulation study: generate, select hyperparameters, fit, score.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, DeltaShape, GroundTruth, ScenarioConfig};
use crate::data;
use crate::error::{Error, Result};
use crate::fitter::{self, FitConfig, FitReport};
use crate::metrics;
use crate::penalty::Hyperparameters;
use crate::selection::{self, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" | "1" => Ok(Self::S1),
            "S2" | "2" => Ok(Self::S2),
            "S3" | "3" => Ok(Self::S3),
            _ => Err(Error::InvalidArgument(format!("unknown scenario '{s}' (expected S1, S2 or S3)"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
        })
    }
}

/// One column of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub config: ScenarioConfig,
}

impl Scenario {
    /// Cells of the scenario. `base` supplies everything the scenario does not
    /// fix (fractions, noise precision).
    pub fn cells(&self, base: &ScenarioConfig) -> Vec<Cell> {
        let mk = |label: String, n, p, shape, scale, levels: &[f64]| Cell {
            label,
            config: ScenarioConfig {
                n,
                p,
                shape,
                signal_scale: scale,
                g_levels: levels.to_vec(),
                ..base.clone()
            },
        };
        let levels = [0.1, 0.2, 0.3];
        match self {
            Self::S1 => {
                let mut out = Vec::new();
                for p in [50, 100, 150] {
                    for n in [100, 250, 500] {
                        out.push(mk(format!("n{n}_p{p}"), n, p, DeltaShape::MexicanHat, 1.0, &levels));
                    }
                }
                out
            }
            Self::S2 => vec![
                mk("delta1_weak".into(), 250, 100, DeltaShape::MexicanHat, 0.5, &levels),
                mk("delta1_strong".into(), 250, 100, DeltaShape::MexicanHat, 1.5, &levels),
                mk(
                    "delta2_weak".into(),
                    250,
                    100,
                    DeltaShape::Bspline { support_fraction: 0.254 },
                    1.0,
                    &levels,
                ),
                mk(
                    "delta2_strong".into(),
                    250,
                    100,
                    DeltaShape::Bspline { support_fraction: 0.354 },
                    1.0,
                    &levels,
                ),
            ],
            Self::S3 => {
                let mut out = Vec::new();
                for (sig, scale) in [("weak", 0.5), ("strong", 1.5)] {
                    for (ad, g) in [("weak", 0.05), ("medium", 0.2)] {
                        out.push(mk(
                            format!("{sig}_signal_{ad}_adulteration"),
                            250,
                            100,
                            DeltaShape::MexicanHat,
                            scale,
                            &[g],
                        ));
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// BIC search over a data-driven grid built per replicate.
    Tune {
        points: usize,
        lo: f64,
        hi: f64,
        max_rounds: usize,
        start_fraction: f64,
    },
    Fixed { lambda: Hyperparameters },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        Self::Tune {
            points: crate::selection::DEFAULT_GRID_POINTS,
            lo: 1e-3,
            hi: 1e1,
            max_rounds: 10,
            start_fraction: crate::selection::DEFAULT_START_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub cells: Vec<Cell>,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub lambda: LambdaPolicy,
}

impl BenchConfig {
    pub fn new(scenario: Scenario, base: &ScenarioConfig, replicates: usize, seed: u64) -> Self {
        Self {
            scenario,
            cells: scenario.cells(base),
            replicates,
            seed,
            fit: FitConfig::default(),
            lambda: LambdaPolicy::default(),
        }
    }

    /// Keeps only the named cells, in the scenario's order.
    pub fn retain_cells(&mut self, labels: &[String]) -> Result<()> {
        for l in labels {
            if !self.cells.iter().any(|c| &c.label == l) {
                return Err(Error::InvalidArgument(format!("scenario {} has no cell '{l}'", self.scenario)));
            }
        }
        self.cells.retain(|c| labels.contains(&c.label));
        Ok(())
    }
}

/// Scores of one replicate. The plain `*_g` scores use unlabeled samples only;
/// the `*_g_all` variants include the labeled ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub mae_g: f64,
    pub ac_g: f64,
    pub sn_g: f64,
    pub sp_g: f64,
    pub mse_delta: f64,
    pub ac_delta: f64,
    pub sn_delta: f64,
    pub sp_delta: f64,
    pub mae_g_all: f64,
    pub ac_g_all: f64,
    pub sn_g_all: f64,
    pub sp_g_all: f64,
    pub lambda: Hyperparameters,
    pub bic: f64,
    pub fits: usize,
    pub outer_iterations: usize,
    /// Worst relative decrease of the objective over every fit of the replicate.
    #[serde(default)]
    pub objective_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub cell: String,
    pub replicate: usize,
    pub seed: u64,
    pub metrics: Option<ReplicateMetrics>,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn succeeded(&self) -> bool {
        self.metrics.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub cell: String,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub succeeded: usize,
    /// Means over successful replicates, in [`METRIC_NAMES`] order.
    pub means: Vec<f64>,
}

impl CellAggregate {
    pub fn mean(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|m| *m == name).map(|k| self.means[k])
    }
}

pub const METRIC_NAMES: [&str; 12] = [
    "MAE", "ac_g", "sn_g", "sp_g", "MSE", "ac_delta", "sn_delta", "sp_delta", "MAE_all", "ac_g_all", "sn_g_all",
    "sp_g_all",
];

impl ReplicateMetrics {
    fn values(&self) -> [f64; 12] {
        [
            self.mae_g,
            self.ac_g,
            self.sn_g,
            self.sp_g,
            self.mse_delta,
            self.ac_delta,
            self.sn_delta,
            self.sp_delta,
            self.mae_g_all,
            self.ac_g_all,
            self.sn_g_all,
            self.sp_g_all,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResults {
    pub scenario: Scenario,
    pub replicates: Vec<ReplicateResult>,
    pub aggregates: Vec<CellAggregate>,
}

impl ScenarioResults {
    pub fn success_rate(&self) -> f64 {
        if self.replicates.is_empty() {
            return 1.0;
        }
        self.replicates.iter().filter(|r| r.succeeded()).count() as f64 / self.replicates.len() as f64
    }

    pub fn aggregate(&self, cell: &str) -> Option<&CellAggregate> {
        self.aggregates.iter().find(|a| a.cell == cell)
    }
}

/// Scores a fit against the truth.
pub fn score(report: &FitReport, truth: &GroundTruth) -> Result<ReplicateMetrics> {
    let unlabeled: Vec<bool> = truth.labeled_mask().iter().map(|l| !l).collect();
    let g_hat = report.g();
    let gu_hat = metrics::select(g_hat, &unlabeled);
    let gu_true = metrics::select(&truth.g_true, &unlabeled);
    let g_scores = metrics::zero_pattern_scores(&gu_hat, &gu_true, 0.0)?;
    let g_all = metrics::zero_pattern_scores(g_hat, &truth.g_true, 0.0)?;
    let d_scores = metrics::zero_pattern_scores(report.delta(), &truth.delta_true, 0.0)?;
    Ok(ReplicateMetrics {
        mae_g: metrics::mae_g(&gu_hat, &gu_true)?,
        ac_g: g_scores.accuracy,
        sn_g: g_scores.sensitivity,
        sp_g: g_scores.specificity,
        mse_delta: metrics::mse_delta(report.delta(), &truth.delta_true)?,
        ac_delta: d_scores.accuracy,
        sn_delta: d_scores.sensitivity,
        sp_delta: d_scores.specificity,
        mae_g_all: metrics::mae_g(g_hat, &truth.g_true)?,
        ac_g_all: g_all.accuracy,
        sn_g_all: g_all.sensitivity,
        sp_g_all: g_all.specificity,
        lambda: report.lambda,
        bic: report.bic,
        fits: 1,
        outer_iterations: report.outer_iterations,
        objective_violation: report.objective_violation(),
    })
}

/// Fits one generated dataset under `policy`; returns the selected fit, the
/// number of fits performed and the worst objective violation among them.
pub fn fit_with_policy(
    ds: &data::SpectraDataset,
    cfg: &FitConfig,
    policy: &LambdaPolicy,
) -> Result<(FitReport, usize, f64)> {
    let mu = data::resolve_mu_pure(ds)?;
    let yc = data::center(ds)?;
    match policy {
        LambdaPolicy::Fixed { lambda } => {
            let report = fitter::fit_centered(&yc, mu.as_slice(), lambda, cfg, None)?;
            let v = report.objective_violation();
            Ok((report, 1, v))
        }
        LambdaPolicy::Tune {
            points,
            lo,
            hi,
            max_rounds,
            start_fraction,
        } => {
            let grid = GridSpec::data_driven(&yc, mu.as_slice(), cfg, *points, *lo, *hi, *max_rounds)?;
            let lam0 = grid.start_at(*start_fraction);
            let trace = selection::tune_centered(&yc, mu.as_slice(), &grid, cfg, &lam0)?;
            Ok((trace.best, trace.fits_performed, trace.max_objective_violation))
        }
    }
}

pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    base.wrapping_add(replicate as u64)
}

pub fn run_replicate(cell: &Cell, replicate: usize, bench: &BenchConfig) -> ReplicateResult {
    let seed = replicate_seed(bench.seed, replicate);
    let cfg = ScenarioConfig { seed, ..cell.config.clone() };
    let outcome = generate(&cfg).and_then(|(ds, truth)| {
        let (report, fits, violation) = fit_with_policy(&ds, &bench.fit, &bench.lambda)?;
        let mut m = score(&report, &truth)?;
        m.fits = fits;
        m.objective_violation = violation;
        Ok(m)
    });
    let (metrics, error) = match outcome {
        Ok(m) => (Some(m), None),
        Err(e) => {
            log::warn!("{} replicate {replicate}: {e}", cell.label);
            (None, Some(e.to_string()))
        }
    };
    ReplicateResult {
        cell: cell.label.clone(),
        replicate,
        seed,
        metrics,
        error,
    }
}

fn cache_path(dir: &Path, cell: &str, replicate: usize) -> PathBuf {
    dir.join(format!("{cell}_r{replicate:04}.json"))
}

fn load_cached(path: &Path, cell: &str, replicate: usize, seed: u64) -> Option<ReplicateResult> {
    let text = fs::read_to_string(path).ok()?;
    let r: ReplicateResult = serde_json::from_str(&text).ok()?;
    (r.cell == cell && r.replicate == replicate && r.seed == seed).then_some(r)
}

/// Runs every replicate of every cell in parallel. With `cache_dir`, finished
/// replicates are stored there and reused by later runs.
pub fn run_scenario(bench: &BenchConfig, cache_dir: Option<&Path>) -> Result<ScenarioResults> {
    bench.fit.validate()?;
    for c in &bench.cells {
        c.config.validate()?;
    }
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
    }
    let jobs: Vec<(usize, usize)> = (0..bench.cells.len())
        .flat_map(|c| (0..bench.replicates).map(move |r| (c, r)))
        .collect();
    let replicates: Vec<ReplicateResult> = jobs
        .par_iter()
        .map(|&(c, r)| -> Result<ReplicateResult> {
            let cell = &bench.cells[c];
            let seed = replicate_seed(bench.seed, r);
            if let Some(dir) = cache_dir {
                let path = cache_path(dir, &cell.label, r);
                if let Some(hit) = load_cached(&path, &cell.label, r, seed) {
                    return Ok(hit);
                }
                let res = run_replicate(cell, r, bench);
                fs::write(&path, serde_json::to_string_pretty(&res)?)?;
                Ok(res)
            } else {
                Ok(run_replicate(cell, r, bench))
            }
        })
        .collect::<Result<_>>()?;
    let aggregates = bench
        .cells
        .iter()
        .map(|cell| aggregate_cell(cell, &replicates))
        .collect();
    Ok(ScenarioResults {
        scenario: bench.scenario,
        replicates,
        aggregates,
    })
}

fn aggregate_cell(cell: &Cell, all: &[ReplicateResult]) -> CellAggregate {
    let mine: Vec<&ReplicateResult> = all.iter().filter(|r| r.cell == cell.label).collect();
    let ok: Vec<[f64; 12]> = mine.iter().filter_map(|r| r.metrics.as_ref().map(|m| m.values())).collect();
    let means = (0..METRIC_NAMES.len())
        .map(|k| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|v| v[k]).sum::<f64>() / ok.len() as f64
            }
        })
        .collect();
    CellAggregate {
        cell: cell.label.clone(),
        n: cell.config.n,
        p: cell.config.p,
        replicates: mine.len(),
        succeeded: ok.len(),
        means,
    }
}

pub fn write_replicates_csv<W: std::io::Write>(results: &ScenarioResults, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["cell", "replicate", "seed", "status"];
    header.extend(METRIC_NAMES);
    header.extend(["lambda_g", "lambda_delta", "lambda_omega", "bic", "fits", "outer_iterations", "objective_violation", "error"]);
    w.write_record(&header)?;
    for r in &results.replicates {
        let mut row = vec![r.cell.clone(), r.replicate.to_string(), r.seed.to_string()];
        match &r.metrics {
            Some(m) => {
                row.push("ok".into());
                row.extend(m.values().iter().map(|v| v.to_string()));
                row.extend([
                    m.lambda.lambda_g.to_string(),
                    m.lambda.lambda_delta.to_string(),
                    m.lambda.lambda_omega.to_string(),
                    m.bic.to_string(),
                    m.fits.to_string(),
                    m.outer_iterations.to_string(),
                    m.objective_violation.to_string(),
                    String::new(),
                ]);
            }
            None => {
                row.push("failed".into());
                row.extend(std::iter::repeat(String::new()).take(METRIC_NAMES.len() + 7));
                row.push(r.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: std::io::Write>(results: &ScenarioResults, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["cell", "n", "p", "replicates", "succeeded"];
    header.extend(METRIC_NAMES);
    w.write_record(&header)?;
    for a in &results.aggregates {
        let mut row = vec![
            a.cell.clone(),
            a.n.to_string(),
            a.p.to_string(),
            a.replicates.to_string(),
            a.succeeded.to_string(),
        ];
        row.extend(a.means.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Results table with MAE and MSE times 100.
pub fn format_table(results: &ScenarioResults) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Scenario {}: means over successful replicates; MAE and MSE x 10^2; g scored on unlabeled samples",
        results.scenario
    );
    let _ = writeln!(
        s,
        "{:<34} {:>7} {:>8} {:>6} {:>6} {:>6} {:>8} {:>6} {:>6} {:>6}",
        "cell", "ok", "MAE", "ac_g", "sn_g", "sp_g", "MSE", "ac_d", "sn_d", "sp_d"
    );
    for a in &results.aggregates {
        let m = &a.means;
        let _ = writeln!(
            s,
            "{:<34} {:>7} {:>8.3} {:>6.3} {:>6.3} {:>6.3} {:>8.3} {:>6.3} {:>6.3} {:>6.3}",
            a.cell,
            format!("{}/{}", a.succeeded, a.replicates),
            100.0 * m[0],
            m[1],
            m[2],
            m[3],
            100.0 * m[4],
            m[5],
            m[6],
            m[7]
        );
    }
    s
}

/// Writes `replicates.csv`, `aggregate.csv` and `summary.txt` into `dir`.
pub fn write_outputs(results: &ScenarioResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_replicates_csv(results, fs::File::create(dir.join("replicates.csv"))?)?;
    write_aggregate_csv(results, fs::File::create(dir.join("aggregate.csv"))?)?;
    fs::write(dir.join("summary.txt"), format_table(results))?;
    Ok(())
}
