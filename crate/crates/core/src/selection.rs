//! Modified BIC and the sequential conditional hyperparameter search.

use std::collections::HashMap;
use std::sync::Arc;

use log::{debug, info};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, CenteredDataset, SpectraDataset};
use crate::error::{Error, Result};
use crate::fitter::{self, FitConfig, FitReport};
use crate::glasso;
use crate::penalty::Hyperparameters;

/// Relative tolerance under which adjacent nonzero shifts count as one block.
pub const FUSION_TOL: f64 = 1e-8;

/// Points per axis of the default data-driven grid.
pub const DEFAULT_GRID_POINTS: usize = 15;
/// Where the default search starts along each axis, as a fraction of the grid.
pub const DEFAULT_START_FRACTION: f64 = 0.25;

/// Number of nonzero constant blocks of `delta`. Neighbours are joined when
/// they are equal within [`FUSION_TOL`] or `fused[j]` marks the pair as fused.
pub fn fused_block_count(delta: &[f64], fused: &[bool]) -> usize {
    let mut blocks = 0;
    for j in 0..delta.len() {
        if delta[j] == 0.0 {
            continue;
        }
        let joined = j > 0 && delta[j - 1] != 0.0 && {
            let (a, b) = (delta[j - 1], delta[j]);
            fused.get(j - 1).copied().unwrap_or(false)
                || (a - b).abs() <= FUSION_TOL * a.abs().max(b.abs())
        };
        if !joined {
            blocks += 1;
        }
    }
    blocks
}

/// `nu_0`: fused blocks of `delta` + unlabeled nonzero memberships + nonzero
/// entries of `Omega` on and above the diagonal.
pub fn degrees_of_freedom(report: &FitReport) -> usize {
    let blocks = fused_block_count(&report.params.delta, &report.delta_fused);
    let g_free = report.params.g.free_nonzero_count();
    let omega = &report.params.omega.omega;
    let p = omega.nrows();
    let mut omega_nnz = 0;
    for j in 0..p {
        for i in 0..=j {
            if omega[(i, j)] != 0.0 {
                omega_nnz += 1;
            }
        }
    }
    blocks + g_free + omega_nnz
}

/// `2 loglik - nu_0 log n`; larger is better.
pub fn bic_value(loglik: f64, df: usize, n: usize) -> f64 {
    bic_with_log_n(loglik, df, (n as f64).ln())
}

pub fn bic_with_log_n(loglik: f64, df: usize, log_n: f64) -> f64 {
    2.0 * loglik - df as f64 * log_n
}

pub fn bic(report: &FitReport) -> f64 {
    bic_value(report.loglik_unpenalized, degrees_of_freedom(report), report.n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_g: Vec<f64>,
    pub grid_delta: Vec<f64>,
    pub grid_omega: Vec<f64>,
    pub max_rounds: usize,
}

impl GridSpec {
    pub fn new(grid_g: Vec<f64>, grid_delta: Vec<f64>, grid_omega: Vec<f64>, max_rounds: usize) -> Result<Self> {
        let spec = Self {
            grid_g,
            grid_delta,
            grid_omega,
            max_rounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [("g", &self.grid_g), ("delta", &self.grid_delta), ("omega", &self.grid_omega)] {
            if grid.is_empty() {
                return Err(Error::InvalidArgument(format!("grid for lambda_{name} is empty")));
            }
            if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("grid for lambda_{name} has invalid values")));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument(format!("grid for lambda_{name} must be ascending")));
            }
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max_rounds must be positive".into()));
        }
        Ok(())
    }

    pub fn total_points(&self) -> usize {
        self.grid_g.len() + self.grid_delta.len() + self.grid_omega.len()
    }

    pub fn contains(&self, lam: &Hyperparameters) -> bool {
        self.grid_g.contains(&lam.lambda_g)
            && self.grid_delta.contains(&lam.lambda_delta)
            && self.grid_omega.contains(&lam.lambda_omega)
    }

    /// Starting point of the search: the grid entry at `fraction` of each axis.
    pub fn start_at(&self, fraction: f64) -> Hyperparameters {
        let pick = |g: &[f64]| g[((g.len() - 1) as f64 * fraction.clamp(0.0, 1.0)).round() as usize];
        Hyperparameters {
            lambda_g: pick(&self.grid_g),
            lambda_delta: pick(&self.grid_delta),
            lambda_omega: pick(&self.grid_omega),
        }
    }

    /// Log-spaced grids over `[lo, hi] * scale`, where each scale is the
    /// data-driven critical value at the initializer:
    /// `||sum_i g_i Omega yc_i||_inf` for `lambda_delta`,
    /// `max_i |delta' Omega yc_i|` for `lambda_g` and
    /// `n/2 * max_{j != h} |S_jh|` for `lambda_omega`.
    pub fn data_driven(
        yc: &CenteredDataset,
        mu_pure: &[f64],
        cfg: &FitConfig,
        points: usize,
        lo: f64,
        hi: f64,
        max_rounds: usize,
    ) -> Result<Self> {
        if points == 0 || !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidArgument("grid needs points > 0 and 0 < lo < hi".into()));
        }
        let (scale_g, scale_delta, scale_omega) = critical_scales(yc, mu_pure, cfg)?;
        let axis = |scale: f64| log_grid(scale * lo, scale * hi, points);
        Self::new(axis(scale_g), axis(scale_delta), axis(scale_omega), max_rounds)
    }

    /// [`DEFAULT_GRID_POINTS`] points per axis over `[1e-3, 1e1]` times the critical values.
    pub fn default_for(yc: &CenteredDataset, mu_pure: &[f64], cfg: &FitConfig) -> Result<Self> {
        Self::data_driven(yc, mu_pure, cfg, DEFAULT_GRID_POINTS, 1e-3, 1e1, 10)
    }
}

/// Critical penalty scales `(lambda_g, lambda_delta, lambda_omega)` at the initializer.
pub fn critical_scales(yc: &CenteredDataset, mu_pure: &[f64], cfg: &FitConfig) -> Result<(f64, f64, f64)> {
    let init = fitter::initialize(yc, mu_pure, cfg)?;
    let omega = &init.omega.omega;
    let g = DVector::from_column_slice(init.g.values());
    let grad = omega * yc.yc().tr_mul(&g);
    let delta = DVector::from_column_slice(&init.delta);
    let proj = yc.yc() * (omega * &delta);
    let s = glasso::scatter_matrix(yc, &init.delta, init.g.values())?;
    let n = yc.n() as f64;
    let or_one = |v: f64| if v > 0.0 && v.is_finite() { v } else { 1.0 };
    Ok((
        or_one(proj.amax()),
        or_one(grad.amax()),
        or_one(0.5 * n * glasso::critical_lambda(&s)),
    ))
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Delta,
    Omega,
    G,
}

impl Axis {
    /// Sweep order within a round.
    pub const ORDER: [Axis; 3] = [Axis::Delta, Axis::Omega, Axis::G];

    fn grid(self, spec: &GridSpec) -> &[f64] {
        match self {
            Axis::Delta => &spec.grid_delta,
            Axis::Omega => &spec.grid_omega,
            Axis::G => &spec.grid_g,
        }
    }

    fn with(self, lam: Hyperparameters, v: f64) -> Hyperparameters {
        let mut out = lam;
        match self {
            Axis::Delta => out.lambda_delta = v,
            Axis::Omega => out.lambda_omega = v,
            Axis::G => out.lambda_g = v,
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub round: usize,
    pub axis: Option<Axis>,
    pub lambda: Hyperparameters,
    /// `-inf` when the fit failed.
    pub bic: f64,
    pub df: Option<usize>,
    /// See [`FitReport::objective_violation`]; absent for failed fits.
    pub objective_violation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub lambda: Hyperparameters,
    pub bic: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub rounds: Vec<RoundRecord>,
    pub evaluations: Vec<GridEvaluation>,
    pub initial_bic: f64,
    pub final_lambda: Hyperparameters,
    pub rounds_used: usize,
    /// The last round left every hyperparameter unchanged.
    pub converged: bool,
    pub fits_performed: usize,
    /// Largest [`FitReport::objective_violation`] over every successful fit.
    pub max_objective_violation: f64,
    pub best: FitReport,
}

/// Centers `ds` and runs [`tune_centered`].
pub fn tune(ds: &SpectraDataset, grid: &GridSpec, cfg: &FitConfig, lam0: &Hyperparameters) -> Result<SelectionTrace> {
    let mu = data::resolve_mu_pure(ds)?;
    let yc = data::center(ds)?;
    tune_centered(&yc, mu.as_slice(), grid, cfg, lam0)
}

/// All of `delta` or all unlabeled memberships shrunk to zero.
fn is_degenerate(report: &FitReport) -> bool {
    let mask = report.params.g.fixed_mask();
    let any_free = mask.iter().any(|f| !f);
    report.delta().iter().all(|&v| v == 0.0) || (any_free && report.params.g.free_nonzero_count() == 0)
}

fn key(lam: &Hyperparameters) -> [u64; 3] {
    [lam.lambda_g.to_bits(), lam.lambda_delta.to_bits(), lam.lambda_omega.to_bits()]
}

/// Optimizes one hyperparameter at a time by BIC with the others held at their
/// latest values; sweeps `delta`, `Omega`, `g` each round and stops when a
/// whole round changes nothing. Fits are cached per hyperparameter triple and
/// warm-started from the incumbent.
pub fn tune_centered(
    yc: &CenteredDataset,
    mu_pure: &[f64],
    grid: &GridSpec,
    cfg: &FitConfig,
    lam0: &Hyperparameters,
) -> Result<SelectionTrace> {
    grid.validate()?;
    lam0.validate()?;
    if !grid.contains(lam0) {
        return Err(Error::InvalidArgument("starting hyperparameters are not on the grid".into()));
    }

    let first = Arc::new(fitter::fit_centered(yc, mu_pure, lam0, cfg, None)?);
    let mut cache: HashMap<[u64; 3], Option<Arc<FitReport>>> = HashMap::new();
    cache.insert(key(lam0), Some(first.clone()));
    let mut evaluations = vec![GridEvaluation {
        round: 0,
        axis: None,
        lambda: *lam0,
        bic: first.bic,
        df: Some(first.df),
        objective_violation: Some(first.objective_violation()),
        error: None,
    }];
    let mut fits_performed = 1;
    let initial_bic = first.bic;
    let mut incumbent = first;
    let mut rounds = Vec::new();
    let mut converged = false;

    for round in 1..=grid.max_rounds {
        let mut changed = false;
        for axis in Axis::ORDER {
            let candidates: Vec<Hyperparameters> =
                axis.grid(grid).iter().map(|&v| axis.with(incumbent.lambda, v)).collect();
            let todo: Vec<Hyperparameters> = candidates
                .iter()
                .filter(|l| !cache.contains_key(&key(l)))
                .copied()
                .collect();
            // degenerate incumbents are not used as warm starts
            let warm = (!is_degenerate(&incumbent)).then(|| incumbent.clone());
            let fresh: Vec<(Hyperparameters, Result<FitReport>)> = todo
                .par_iter()
                .map(|lam| (*lam, fitter::fit_centered(yc, mu_pure, lam, cfg, warm.as_deref())))
                .collect();
            fits_performed += fresh.len();
            for (lam, res) in fresh {
                let entry = match res {
                    Ok(r) => {
                        evaluations.push(GridEvaluation {
                            round,
                            axis: Some(axis),
                            lambda: lam,
                            bic: r.bic,
                            df: Some(r.df),
                            objective_violation: Some(r.objective_violation()),
                            error: None,
                        });
                        Some(Arc::new(r))
                    }
                    Err(e) => {
                        debug!("fit failed at {lam:?}: {e}");
                        evaluations.push(GridEvaluation {
                            round,
                            axis: Some(axis),
                            lambda: lam,
                            bic: f64::NEG_INFINITY,
                            df: None,
                            objective_violation: None,
                            error: Some(e.to_string()),
                        });
                        None
                    }
                };
                cache.insert(key(&lam), entry);
            }

            // Ascending scan with strict improvement: ties go to the smaller lambda.
            let mut best: Option<&Arc<FitReport>> = None;
            for lam in &candidates {
                if let Some(Some(r)) = cache.get(&key(lam)) {
                    let score = if r.bic.is_nan() { f64::NEG_INFINITY } else { r.bic };
                    if best.map_or(true, |b| score > b.bic) {
                        best = Some(r);
                    }
                }
            }
            // The incumbent is one of the candidates, so `best` never scores lower.
            if let Some(b) = best {
                if b.lambda != incumbent.lambda {
                    changed = true;
                    incumbent = b.clone();
                }
            }
        }
        info!(
            "tuning round {round}: lambda = ({:.4e}, {:.4e}, {:.4e}), BIC = {:.4}",
            incumbent.lambda.lambda_g, incumbent.lambda.lambda_delta, incumbent.lambda.lambda_omega, incumbent.bic
        );
        rounds.push(RoundRecord {
            round,
            lambda: incumbent.lambda,
            bic: incumbent.bic,
            df: incumbent.df,
        });
        if !changed {
            converged = true;
            break;
        }
    }

    let max_objective_violation = evaluations
        .iter()
        .filter_map(|e| e.objective_violation)
        .fold(0.0, f64::max);
    Ok(SelectionTrace {
        max_objective_violation,
        rounds_used: rounds.len(),
        rounds,
        evaluations,
        initial_bic,
        final_lambda: incumbent.lambda,
        converged,
        fits_performed,
        best: Arc::try_unwrap(incumbent).unwrap_or_else(|a| (*a).clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_counting() {
        assert_eq!(fused_block_count(&[0.0, 0.0, 1.2, 1.2, 0.7], &[]), 2);
        assert_eq!(fused_block_count(&[0.0; 5], &[]), 0);
        assert_eq!(fused_block_count(&[4.0, 3.0, 2.0, 1.0], &[]), 4);
        assert_eq!(fused_block_count(&[1.0, 0.0, 1.0], &[]), 2);
        assert_eq!(fused_block_count(&[1.0, 1.0 + 1e-12, 2.0], &[]), 2);
        // fusion flags from the solver join blocks that differ by roundoff
        assert_eq!(fused_block_count(&[1.0, 1.0001, 2.0], &[true, false]), 2);
    }

    #[test]
    fn bic_arithmetic() {
        assert_eq!(bic_with_log_n(-100.0, 10, 2.0), -220.0);
        assert!(bic_value(-100.0, 5, 50) > bic_value(-100.0, 10, 50));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 10.0, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[7] - 10.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(vec![], vec![1.0], vec![1.0], 3).is_err());
        assert!(GridSpec::new(vec![2.0, 1.0], vec![1.0], vec![1.0], 3).is_err());
        assert!(GridSpec::new(vec![-1.0], vec![1.0], vec![1.0], 3).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0], vec![1.0], vec![1.0], 0).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0], vec![1.0], vec![1.0], 2).is_ok());
    }
}
