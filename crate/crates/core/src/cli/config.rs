//! Run settings read from a TOML file with flat dotted keys such as
//! `fit.outer_tol = 1e-6`. Command-line flags are applied on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::Value;

use crate::data::CsvSchema;
use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::penalty::Hyperparameters;
use crate::simulation::{DeltaShape, LambdaPolicy, Scenario, ScenarioConfig};

/// `auto` or a fixed triple `g,delta,omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Auto,
    Fixed(Hyperparameters),
}

impl FromStr for LambdaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        let v = parse_list(s)?;
        if v.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be 'auto' or three comma-separated values g,delta,omega; got '{s}'"
            )));
        }
        Ok(Self::Fixed(Hyperparameters::new(v[0], v[1], v[2])?))
    }
}

/// Comma-separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("'{t}' is not a number")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSettings {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
    pub max_rounds: usize,
    pub start_fraction: f64,
    pub g: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub omega: Option<Vec<f64>>,
}

impl Default for GridSettings {
    fn default() -> Self {
        match LambdaPolicy::default() {
            LambdaPolicy::Tune {
                points,
                lo,
                hi,
                max_rounds,
                start_fraction,
            } => Self {
                points,
                lo,
                hi,
                max_rounds,
                start_fraction,
                g: None,
                delta: None,
                omega: None,
            },
            LambdaPolicy::Fixed { .. } => unreachable!("the default policy tunes"),
        }
    }
}

impl GridSettings {
    pub fn explicit(&self) -> Result<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> {
        match (&self.g, &self.delta, &self.omega) {
            (None, None, None) => Ok(None),
            (Some(g), Some(d), Some(o)) => Ok(Some((g.clone(), d.clone(), o.clone()))),
            _ => Err(Error::InvalidArgument(
                "explicit grids need all of grid.g, grid.delta and grid.omega".into(),
            )),
        }
    }

    pub fn policy(&self) -> LambdaPolicy {
        LambdaPolicy::Tune {
            points: self.points,
            lo: self.lo,
            hi: self.hi,
            max_rounds: self.max_rounds,
            start_fraction: self.start_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub schema: CsvSchema,
    pub aggregate: usize,
    pub mu_pure: Option<PathBuf>,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            schema: CsvSchema::default(),
            aggregate: 1,
            mu_pure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub scenario: Scenario,
    pub cell: Option<String>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub shape: Option<DeltaShape>,
    pub signal_scale: Option<f64>,
    pub g_levels: Option<Vec<f64>>,
    pub base: ScenarioConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            scenario: Scenario::S1,
            cell: None,
            n: None,
            p: None,
            shape: None,
            signal_scale: None,
            g_levels: None,
            base: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub replicates: usize,
    pub seed: u64,
    pub cells: Vec<String>,
    pub resume: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            replicates: 20,
            seed: 1,
            cells: Vec::new(),
            resume: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub lambda: Option<LambdaSpec>,
    pub grid: GridSettings,
    pub data: DataSettings,
    pub simulation: SimulationSettings,
    pub bench: BenchSettings,
    pub threads: Option<usize>,
    pub log_level: Option<String>,
}

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "fit.outer_tol",
    "fit.outer_max_iter",
    "fit.init_max_iter",
    "fit.init_tol",
    "fit.g_max",
    "admm.eps_abs",
    "admm.eps_rel",
    "admm.max_iter",
    "admm.rho_init",
    "admm.adapt_mu",
    "admm.adapt_tau",
    "admm.adaptive_rho",
    "glasso.tol",
    "glasso.max_iter",
    "lambda",
    "grid.points",
    "grid.lo",
    "grid.hi",
    "grid.max_rounds",
    "grid.start_fraction",
    "grid.g",
    "grid.delta",
    "grid.omega",
    "data.id_column",
    "data.g_column",
    "data.aggregate",
    "data.mu_pure",
    "simulation.scenario",
    "simulation.cell",
    "simulation.n",
    "simulation.p",
    "simulation.shape",
    "simulation.signal_scale",
    "simulation.support_fraction",
    "simulation.adulterated_fraction",
    "simulation.g_levels",
    "simulation.labeled_fraction",
    "simulation.omega",
    "simulation.seed",
    "bench.replicates",
    "bench.seed",
    "bench.cells",
    "bench.resume",
    "run.threads",
    "run.log_level",
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn bad(key: &str, want: &str) -> Error {
    Error::InvalidArgument(format!("config key '{key}' must be {want}"))
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number")),
    }
}

fn uint(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad(key, "a nonnegative integer")),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false"))
}

fn string(key: &str, v: &Value) -> Result<String> {
    v.as_str().map(str::to_owned).ok_or_else(|| bad(key, "a string"))
}

fn floats(key: &str, v: &Value) -> Result<Vec<f64>> {
    match v {
        Value::Array(a) => a.iter().map(|x| float(key, x)).collect(),
        Value::String(s) => parse_list(s),
        other => Ok(vec![float(key, other)?]),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("config file: {e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = Self::default();
        for (key, value) in &flat {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let f = &mut self.fit;
        match key {
            "fit.outer_tol" => f.outer_tol = float(key, v)?,
            "fit.outer_max_iter" => f.outer_max_iter = uint(key, v)?,
            "fit.init_max_iter" => f.init_max_iter = uint(key, v)?,
            "fit.init_tol" => f.init_tol = float(key, v)?,
            "fit.g_max" => f.g_max = float(key, v)?,
            "admm.eps_abs" => f.admm.eps_abs = float(key, v)?,
            "admm.eps_rel" => f.admm.eps_rel = float(key, v)?,
            "admm.max_iter" => f.admm.max_iter = uint(key, v)?,
            "admm.rho_init" => f.admm.rho_init = float(key, v)?,
            "admm.adapt_mu" => f.admm.adapt_mu = float(key, v)?,
            "admm.adapt_tau" => f.admm.adapt_tau = float(key, v)?,
            "admm.adaptive_rho" => f.admm.adaptive_rho = boolean(key, v)?,
            "glasso.tol" => f.glasso.tol = float(key, v)?,
            "glasso.max_iter" => f.glasso.max_iter = uint(key, v)?,
            "lambda" => {
                self.lambda = Some(match v {
                    Value::String(s) => s.parse()?,
                    Value::Array(_) => {
                        let x = floats(key, v)?;
                        if x.len() != 3 {
                            return Err(bad(key, "\"auto\" or three numbers"));
                        }
                        LambdaSpec::Fixed(Hyperparameters::new(x[0], x[1], x[2])?)
                    }
                    _ => return Err(bad(key, "\"auto\" or three numbers")),
                })
            }
            "grid.points" => self.grid.points = uint(key, v)?,
            "grid.lo" => self.grid.lo = float(key, v)?,
            "grid.hi" => self.grid.hi = float(key, v)?,
            "grid.max_rounds" => self.grid.max_rounds = uint(key, v)?,
            "grid.start_fraction" => self.grid.start_fraction = float(key, v)?,
            "grid.g" => self.grid.g = Some(floats(key, v)?),
            "grid.delta" => self.grid.delta = Some(floats(key, v)?),
            "grid.omega" => self.grid.omega = Some(floats(key, v)?),
            "data.id_column" => self.data.schema.id_column = string(key, v)?,
            "data.g_column" => self.data.schema.g_column = string(key, v)?,
            "data.aggregate" => self.data.aggregate = uint(key, v)?,
            "data.mu_pure" => self.data.mu_pure = Some(PathBuf::from(string(key, v)?)),
            "simulation.scenario" => self.simulation.scenario = string(key, v)?.parse()?,
            "simulation.cell" => self.simulation.cell = Some(string(key, v)?),
            "simulation.n" => self.simulation.n = Some(uint(key, v)?),
            "simulation.p" => self.simulation.p = Some(uint(key, v)?),
            "simulation.shape" => self.simulation.shape = Some(parse_shape(&string(key, v)?, None)?),
            "simulation.signal_scale" => self.simulation.signal_scale = Some(float(key, v)?),
            "simulation.support_fraction" => {
                let sf = float(key, v)?;
                self.simulation.shape = Some(DeltaShape::Bspline { support_fraction: sf });
            }
            "simulation.adulterated_fraction" => self.simulation.base.adulterated_fraction = float(key, v)?,
            "simulation.g_levels" => self.simulation.g_levels = Some(floats(key, v)?),
            "simulation.labeled_fraction" => self.simulation.base.labeled_fraction = float(key, v)?,
            "simulation.omega" => self.simulation.base.omega_diag = floats(key, v)?,
            "simulation.seed" => self.simulation.base.seed = uint(key, v)? as u64,
            "bench.replicates" => self.bench.replicates = uint(key, v)?,
            "bench.seed" => self.bench.seed = uint(key, v)? as u64,
            "bench.cells" => {
                self.bench.cells = match v {
                    Value::Array(a) => a.iter().map(|x| string(key, x)).collect::<Result<_>>()?,
                    Value::String(s) => s.split(',').map(|t| t.trim().to_owned()).collect(),
                    _ => return Err(bad(key, "a list of cell names")),
                }
            }
            "bench.resume" => self.bench.resume = boolean(key, v)?,
            "run.threads" => self.threads = Some(uint(key, v)?),
            "run.log_level" => self.log_level = Some(string(key, v)?),
            _ => {
                return Err(Error::InvalidArgument(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }
}

/// `mexican_hat` or `bspline`; the B-spline shape needs a support fraction.
pub fn parse_shape(s: &str, support_fraction: Option<f64>) -> Result<DeltaShape> {
    match s {
        "mexican_hat" | "mexican-hat" => Ok(DeltaShape::MexicanHat),
        "bspline" | "b-spline" => Ok(DeltaShape::Bspline {
            support_fraction: support_fraction.unwrap_or(0.254),
        }),
        _ => Err(Error::InvalidArgument(format!(
            "unknown shape '{s}' (expected mexican_hat or bspline)"
        ))),
    }
}
