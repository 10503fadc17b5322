//! Block coordinate ascent on the penalized log-likelihood.
//!
//! Each outer iteration runs a `delta` step (ADMM), an `Omega` step (graphical
//! lasso on the residual scatter built from the new `delta` and the previous
//! `g`) and a `g` step (closed form, using the new `delta` and `Omega`).
//!
//! The graphical lasso works on `log det - tr(S Omega)`, which is the
//! log-likelihood divided by `n/2`; it therefore receives `2 lambda_omega / n`
//! so that each block step maximizes the same objective that is reported.
//! A block step whose inexact solution does not improve on the incumbent is
//! discarded, which keeps the objective trace monotone.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmState, DeltaSubproblem};
use crate::data::{self, CenteredDataset, SpectraDataset, G_MAX};
use crate::error::{Error, Result};
use crate::glasso::{self, GlassoConfig, PrecisionEstimate};
use crate::membership::{self, MembershipVector};
use crate::penalty::{penalty_value, Hyperparameters, PenaltyOperator};
use crate::selection;

const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop when the relative objective improvement falls below this.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub admm: AdmmConfig,
    pub glasso: GlassoConfig,
    pub init_max_iter: usize,
    pub init_tol: f64,
    pub g_max: f64,
    /// Reserved for randomized tie-breaking; the fit itself is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            outer_max_iter: 200,
            admm: AdmmConfig::default(),
            glasso: GlassoConfig::default(),
            init_max_iter: 100,
            init_tol: 1e-8,
            g_max: G_MAX,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.admm.validate()?;
        let ok = self.outer_tol > 0.0
            && self.init_tol > 0.0
            && self.glasso.tol > 0.0
            && self.outer_max_iter > 0
            && self.init_max_iter > 0
            && self.glasso.max_iter > 0
            && self.g_max > 0.0
            && self.g_max <= G_MAX;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "fit tolerances and iteration caps must be positive and g_max in (0, {G_MAX}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub delta: Vec<f64>,
    pub omega: PrecisionEstimate,
    pub g: MembershipVector,
    pub mu_pure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub outer: usize,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    pub admm_primal_residual: f64,
    pub admm_dual_residual: f64,
    pub admm_rho: f64,
    pub delta_step_accepted: bool,
    pub glasso_iterations: usize,
    pub glasso_converged: bool,
    pub omega_step_accepted: bool,
    pub g_update_skipped: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda: Hyperparameters,
    pub params: ModelParameters,
    /// Penalized log-likelihood at the initializer, then after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub loglik_unpenalized: f64,
    pub bic: f64,
    pub df: usize,
    pub n: usize,
    pub converged: bool,
    pub outer_iterations: usize,
    pub delta_support: Vec<bool>,
    /// `delta_fused[j]`: the difference coordinate between features `j` and
    /// `j + 1` was shrunk to zero by the last accepted ADMM solve.
    pub delta_fused: Vec<bool>,
    pub g_nonzero_count: usize,
    pub inner_diagnostics: Vec<IterationDiagnostics>,
    pub admm_state: Option<AdmmState>,
}

impl FitReport {
    pub fn delta(&self) -> &[f64] {
        &self.params.delta
    }

    pub fn g(&self) -> &[f64] {
        self.params.g.values()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.params.omega.omega
    }

    pub fn p(&self) -> usize {
        self.params.delta.len()
    }

    /// Largest decrease of the penalized objective between consecutive outer
    /// iterations, relative to `1 + |previous value|`; zero for a monotone trace.
    pub fn objective_violation(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| (w[0] - w[1]) / (1.0 + w[0].abs()))
            .fold(0.0, f64::max)
    }
}

/// Gaussian log-likelihood of the centered data,
/// `sum_i [1/2 log det Omega - p/2 log 2 pi - 1/2 r_i' Omega r_i]`
/// with `r_i = yc_i - g_i delta`.
pub fn gaussian_log_likelihood(
    yc: &CenteredDataset,
    delta: &[f64],
    g: &[f64],
    omega: &DMatrix<f64>,
) -> Result<f64> {
    let (n, p) = (yc.n(), yc.p());
    if delta.len() != p || g.len() != n || omega.shape() != (p, p) {
        return Err(Error::InvalidArgument("log-likelihood dimensions".into()));
    }
    let log_det = glasso::log_det(omega)?;
    let r = glasso::residuals(yc.yc(), delta, g);
    let quad = (&r * omega).component_mul(&r).sum();
    let nf = n as f64;
    Ok(0.5 * nf * log_det - 0.5 * nf * p as f64 * (2.0 * PI).ln() - 0.5 * quad)
}

pub fn log_likelihood(yc: &CenteredDataset, params: &ModelParameters) -> Result<f64> {
    gaussian_log_likelihood(yc, &params.delta, params.g.values(), &params.omega.omega)
}

/// Log-likelihood minus the penalty.
pub fn penalized_objective(
    yc: &CenteredDataset,
    delta: &[f64],
    g: &[f64],
    omega: &DMatrix<f64>,
    lam: &Hyperparameters,
) -> Result<f64> {
    let d = PenaltyOperator::fused(yc.p())?;
    Ok(gaussian_log_likelihood(yc, delta, g, omega)? - penalty_value(g, delta, omega, lam, &d)?)
}

/// Alternating least-squares start for `(delta, g)` with a diagonal `Omega`
/// built from the per-feature residual variances.
///
/// Unlabeled memberships start at `g_max / 2`.
pub fn initialize(yc: &CenteredDataset, mu_pure: &[f64], cfg: &FitConfig) -> Result<ModelParameters> {
    cfg.validate()?;
    let (n, p) = (yc.n(), yc.p());
    if mu_pure.len() != p {
        return Err(Error::InvalidArgument("mu_pure length differs from p".into()));
    }
    if n == 0 {
        return Err(Error::Validation("dataset has no samples".into()));
    }
    let y = yc.yc();
    let mut g = MembershipVector::seeded(yc.labels(), cfg.g_max / 2.0)?;
    let mut delta = DVector::zeros(p);
    let mut rss_prev = f64::INFINITY;
    for it in 0..cfg.init_max_iter {
        let gv = DVector::from_column_slice(g.values());
        let sg2 = gv.norm_squared();
        delta = if sg2 > 0.0 {
            y.tr_mul(&gv) / sg2
        } else {
            DVector::zeros(p)
        };
        let sd2 = delta.norm_squared();
        if sd2 > 0.0 {
            let proj = y * &delta / sd2;
            g.set_free(proj.iter().copied().map(|v| membership::clip(v, cfg.g_max)).enumerate());
        }
        let rss = glasso::residuals(y, delta.as_slice(), g.values()).norm_squared();
        if rss_prev.is_finite() && rss_prev - rss <= cfg.init_tol * rss_prev {
            debug!("initializer stopped after {} alternations (rss {rss:.6e})", it + 1);
            break;
        }
        rss_prev = rss;
    }
    let r = glasso::residuals(y, delta.as_slice(), g.values());
    let diag: Vec<f64> = r
        .column_iter()
        .map(|c| 1.0 / (c.norm_squared() / n as f64).max(VARIANCE_FLOOR))
        .collect();
    Ok(ModelParameters {
        delta: delta.as_slice().to_vec(),
        omega: PrecisionEstimate::diagonal(&diag)?,
        g,
        mu_pure: mu_pure.to_vec(),
    })
}

/// Centers `ds` and fits the model at `lam`.
pub fn fit(ds: &SpectraDataset, lam: &Hyperparameters, cfg: &FitConfig) -> Result<FitReport> {
    let mu = data::resolve_mu_pure(ds)?;
    let yc = data::center(ds)?;
    fit_centered(&yc, mu.as_slice(), lam, cfg, None)
}

/// Fits on already-centered data. `warm` starts from a previous fit on the same
/// data (used by the hyperparameter search) instead of the initializer.
pub fn fit_centered(
    yc: &CenteredDataset,
    mu_pure: &[f64],
    lam: &Hyperparameters,
    cfg: &FitConfig,
    warm: Option<&FitReport>,
) -> Result<FitReport> {
    lam.validate()?;
    cfg.validate()?;
    let (n, p) = (yc.n(), yc.p());
    let d = PenaltyOperator::fused(p)?;

    let (mut params, mut admm_warm, mut fused) = match warm {
        Some(w) => {
            if w.p() != p || w.params.g.len() != n {
                return Err(Error::InvalidArgument("warm start does not match the data".into()));
            }
            let mut params = w.params.clone();
            params.g = MembershipVector::new(
                yc.labels()
                    .iter()
                    .zip(w.params.g.values())
                    .map(|(l, v)| l.unwrap_or(*v))
                    .collect(),
                yc.supervision_mask(),
            )?;
            params.mu_pure = mu_pure.to_vec();
            (params, w.admm_state.clone(), w.delta_fused.clone())
        }
        None => (initialize(yc, mu_pure, cfg)?, None, vec![false; p - 1]),
    };

    let lambda_glasso = 2.0 * lam.lambda_omega / n as f64;
    let objective = |params: &ModelParameters| {
        penalized_objective(yc, &params.delta, params.g.values(), &params.omega.omega, lam)
    };
    let mut trace = vec![objective(&params)?];
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut outer_iterations = 0;

    for t in 1..=cfg.outer_max_iter {
        outer_iterations = t;

        // delta step
        let sub = DeltaSubproblem::from_data(yc, params.g.values(), &params.omega.omega, lam.lambda_delta, d)?;
        let res = sub
            .solve(&cfg.admm, admm_warm.as_ref())
            .map_err(|e| e.in_outer_iteration(t))?;
        let delta_step_accepted = sub.objective(&res.delta) <= sub.objective(&params.delta);
        if delta_step_accepted {
            params.delta = res.delta.clone();
            fused = res.gamma[..p - 1].iter().map(|&v| v == 0.0).collect();
        }

        // Omega step
        let s = glasso::scatter_matrix(yc, &params.delta, params.g.values())?;
        let est = glasso::solve_omega(&s, lambda_glasso, &cfg.glasso, Some(&params.omega))
            .map_err(|e| e.in_outer_iteration(t))?;
        let omega_step_accepted = glasso::objective(&est.omega, &s, lambda_glasso)?
            >= glasso::objective(&params.omega.omega, &s, lambda_glasso)?;
        let (glasso_iterations, glasso_converged) = (est.iterations, est.converged);
        if omega_step_accepted {
            params.omega = est;
        }

        // g step
        let g_update_skipped = match membership::update_g(
            yc,
            &params.delta,
            &params.omega.omega,
            lam.lambda_g,
            &params.g,
            cfg.g_max,
        ) {
            Ok(g) => {
                params.g = g;
                false
            }
            Err(Error::DegenerateSignal) => {
                debug!("outer iteration {t}: delta is zero, membership update skipped");
                true
            }
            Err(e) => return Err(e.in_outer_iteration(t)),
        };

        let obj = objective(&params).map_err(|e| e.in_outer_iteration(t))?;
        let prev = *trace.last().expect("trace starts with the initial objective");
        trace.push(obj);
        diagnostics.push(IterationDiagnostics {
            outer: t,
            admm_iterations: res.iterations,
            admm_converged: res.converged,
            admm_primal_residual: res.primal_residual_norm,
            admm_dual_residual: res.dual_residual_norm,
            admm_rho: res.state.rho,
            delta_step_accepted,
            glasso_iterations,
            glasso_converged,
            omega_step_accepted,
            g_update_skipped,
            objective: obj,
        });
        admm_warm = Some(res.state);

        let improvement = (obj - prev) / prev.abs().max(f64::MIN_POSITIVE);
        if improvement < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    let loglik = log_likelihood(yc, &params)?;
    let mut report = FitReport {
        lambda: *lam,
        delta_support: params.delta.iter().map(|&v| v != 0.0).collect(),
        g_nonzero_count: params.g.values().iter().filter(|&&v| v != 0.0).count(),
        params,
        objective_trace: trace,
        loglik_unpenalized: loglik,
        bic: f64::NAN,
        df: 0,
        n,
        converged,
        outer_iterations,
        delta_fused: fused,
        inner_diagnostics: diagnostics,
        admm_state: admm_warm,
    };
    report.df = selection::degrees_of_freedom(&report);
    report.bic = selection::bic_value(report.loglik_unpenalized, report.df, n);
    Ok(report)
}
