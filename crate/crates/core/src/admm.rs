//! ADMM for the mean-shift subproblem
//!
//! ```text
//! minimize_delta  1/2 sum_i (y_i - g_i delta)' Omega (y_i - g_i delta) + lambda ||D delta||_1
//! ```
//!
//! split as `D delta - gamma = 0` with the unscaled multiplier `u`. The
//! `delta` step solves `(w Omega + rho D'D) delta = b + D'(rho gamma - u)` with
//! `w = sum g_i^2` and `b = sum g_i Omega y_i`; the system matrix only changes
//! with `rho`, so its Cholesky factor is reused across iterations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::CenteredDataset;
use crate::error::{Error, Result};
use crate::penalty::{soft_threshold, PenaltyOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho_init: f64,
    /// Residual ratio that triggers a change of `rho`.
    pub adapt_mu: f64,
    /// Factor by which `rho` is scaled.
    pub adapt_tau: f64,
    pub adaptive_rho: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iter: 5000,
            rho_init: 1.0,
            adapt_mu: 10.0,
            adapt_tau: 2.0,
            adaptive_rho: true,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.eps_abs, self.eps_rel, self.rho_init]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "ADMM tolerances, rho_init and max_iter must be positive".into(),
            ));
        }
        if !(self.adapt_mu > 1.0 && self.adapt_tau > 1.0) {
            return Err(Error::InvalidArgument("ADMM adapt_mu and adapt_tau must exceed 1".into()));
        }
        Ok(())
    }
}

/// Iterate of the solver; also used to warm-start the next solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub u: Vec<f64>,
    pub rho: f64,
    pub iteration: usize,
}

impl AdmmState {
    pub fn cold(p: usize, rho: f64) -> Self {
        let m = 2 * p - 1;
        Self {
            delta: vec![0.0; p],
            gamma: vec![0.0; m],
            u: vec![0.0; m],
            rho,
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmResult {
    /// Solution of the last `delta` step.
    pub delta_raw: Vec<f64>,
    /// `delta_raw` with features whose lasso coordinate of `gamma` is zero set to 0.
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub iterations: usize,
    pub primal_residual_norm: f64,
    pub dual_residual_norm: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub converged: bool,
    /// Final iterate, for warm starts and optimality certificates (`u / lambda`
    /// is a subgradient of `||.||_1` at `gamma`).
    pub state: AdmmState,
}

/// The mean-shift subproblem reduced to its sufficient statistics.
#[derive(Debug, Clone)]
pub struct DeltaSubproblem<'a> {
    omega: &'a DMatrix<f64>,
    weight: f64,
    linear: DVector<f64>,
    lambda: f64,
    d: PenaltyOperator,
}

impl<'a> DeltaSubproblem<'a> {
    /// `weight = sum g_i^2`, `linear = sum g_i Omega y_i`.
    pub fn new(
        omega: &'a DMatrix<f64>,
        weight: f64,
        linear: DVector<f64>,
        lambda: f64,
        d: PenaltyOperator,
    ) -> Result<Self> {
        let p = d.cols();
        if omega.shape() != (p, p) || linear.len() != p {
            return Err(Error::InvalidArgument(format!(
                "delta subproblem dimensions: omega {:?}, linear {}, p = {p}",
                omega.shape(),
                linear.len()
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) || !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument("lambda and weight must be finite and >= 0".into()));
        }
        Ok(Self {
            omega,
            weight,
            linear,
            lambda,
            d,
        })
    }

    pub fn from_data(
        yc: &CenteredDataset,
        g: &[f64],
        omega: &'a DMatrix<f64>,
        lambda: f64,
        d: PenaltyOperator,
    ) -> Result<Self> {
        if g.len() != yc.n() || yc.p() != d.cols() {
            return Err(Error::InvalidArgument(format!(
                "g has length {}, data is {}x{}, operator p = {}",
                g.len(),
                yc.n(),
                yc.p(),
                d.cols()
            )));
        }
        let gv = DVector::from_column_slice(g);
        let weighted_sum = yc.yc().tr_mul(&gv);
        let linear = omega * weighted_sum;
        Self::new(omega, gv.norm_squared(), linear, lambda, d)
    }

    pub fn p(&self) -> usize {
        self.d.cols()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    /// `1/2 w delta' Omega delta - b' delta + lambda ||D delta||_1`, i.e. the
    /// negative log-likelihood in `delta` up to a constant, plus the penalty.
    pub fn objective(&self, delta: &[f64]) -> f64 {
        let dv = DVector::from_column_slice(delta);
        0.5 * self.weight * dv.dot(&(self.omega * &dv)) - self.linear.dot(&dv)
            + self.lambda * self.d.l1_of_apply(delta)
    }

    /// `L_rho(delta, gamma, u)`.
    pub fn augmented_lagrangian(&self, delta: &[f64], gamma: &[f64], u: &[f64], rho: f64) -> f64 {
        let dv = DVector::from_column_slice(delta);
        let smooth = 0.5 * self.weight * dv.dot(&(self.omega * &dv)) - self.linear.dot(&dv);
        let l1: f64 = gamma.iter().map(|v| v.abs()).sum();
        let dd = self.d.apply(delta);
        let mut coupling = 0.0;
        let mut quad = 0.0;
        for k in 0..dd.len() {
            let r = dd[k] - gamma[k];
            coupling += u[k] * r;
            quad += r * r;
        }
        smooth + self.lambda * l1 + coupling + 0.5 * rho * quad
    }

    /// `||w Omega delta - b + lambda D' s||_inf`.
    pub fn stationarity_residual(&self, delta: &[f64], s: &[f64]) -> f64 {
        let dv = DVector::from_column_slice(delta);
        let mut grad = self.omega * dv * self.weight - &self.linear;
        let dts = self.d.apply_transpose(s);
        for j in 0..grad.len() {
            grad[j] += self.lambda * dts[j];
        }
        grad.amax()
    }

    fn factor(&self, rho: f64, iteration: usize) -> Result<Cholesky<f64, Dyn>> {
        let mut m = self.omega * self.weight + self.d.gram() * rho;
        let sym = (&m + m.transpose()) * 0.5;
        m.copy_from(&sym);
        Cholesky::new(m).ok_or_else(|| {
            Error::numerical_at(
                format!("ADMM system matrix is not positive definite (rho = {rho})"),
                iteration,
            )
        })
    }

    pub fn solve(&self, cfg: &AdmmConfig, warm: Option<&AdmmState>) -> Result<AdmmResult> {
        cfg.validate()?;
        let p = self.p();
        let m = self.d.rows();
        let mut state = match warm {
            Some(w) if w.delta.len() == p && w.gamma.len() == m && w.u.len() == m && w.rho > 0.0 => {
                AdmmState {
                    iteration: 0,
                    ..w.clone()
                }
            }
            Some(_) => {
                return Err(Error::InvalidArgument("warm start has inconsistent dimensions".into()))
            }
            None => AdmmState::cold(p, cfg.rho_init),
        };

        let mut chol = self.factor(state.rho, 0)?;
        let mut rhs = DVector::zeros(p);
        let mut scratch_m = vec![0.0; m];
        let mut scratch_p = vec![0.0; p];
        let mut d_delta = vec![0.0; m];
        let mut gamma_old = vec![0.0; m];
        let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
        let (mut eps_pri, mut eps_dual) = (0.0, 0.0);
        let mut converged = false;
        let sqrt_m = (m as f64).sqrt();
        let sqrt_p = (p as f64).sqrt();

        for it in 1..=cfg.max_iter {
            state.iteration = it;
            let rho = state.rho;

            // delta-update
            for k in 0..m {
                scratch_m[k] = rho * state.gamma[k] - state.u[k];
            }
            self.d.apply_transpose_into(&scratch_m, &mut scratch_p);
            for j in 0..p {
                rhs[j] = self.linear[j] + scratch_p[j];
            }
            chol.solve_mut(&mut rhs);
            state.delta.copy_from_slice(rhs.as_slice());
            if state.delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical_at("non-finite delta iterate", it));
            }

            // gamma- and u-updates
            self.d.apply_into(&state.delta, &mut d_delta);
            gamma_old.copy_from_slice(&state.gamma);
            let mut r_sq = 0.0;
            for k in 0..m {
                state.gamma[k] = soft_threshold(state.u[k] + rho * d_delta[k], self.lambda) / rho;
                let r = d_delta[k] - state.gamma[k];
                state.u[k] += rho * r;
                r_sq += r * r;
                scratch_m[k] = state.gamma[k] - gamma_old[k];
            }
            r_norm = r_sq.sqrt();
            self.d.apply_transpose_into(&scratch_m, &mut scratch_p);
            s_norm = rho * norm(&scratch_p);

            self.d.apply_transpose_into(&state.u, &mut scratch_p);
            eps_pri = sqrt_m * cfg.eps_abs + cfg.eps_rel * norm(&d_delta).max(norm(&state.gamma));
            eps_dual = sqrt_p * cfg.eps_abs + cfg.eps_rel * norm(&scratch_p);
            if r_norm < eps_pri && s_norm < eps_dual {
                converged = true;
                break;
            }

            if cfg.adaptive_rho {
                // `u` is the unscaled multiplier, so it is left untouched when rho moves.
                let new_rho = if r_norm > cfg.adapt_mu * s_norm {
                    rho * cfg.adapt_tau
                } else if s_norm > cfg.adapt_mu * r_norm {
                    rho / cfg.adapt_tau
                } else {
                    rho
                };
                if new_rho != rho {
                    state.rho = new_rho;
                    chol = self.factor(new_rho, it)?;
                }
            }
        }

        let delta_raw = state.delta.clone();
        let delta = delta_raw
            .iter()
            .enumerate()
            .map(|(j, &v)| if state.gamma[self.d.identity_row(j)] != 0.0 { v } else { 0.0 })
            .collect();
        Ok(AdmmResult {
            delta_raw,
            delta,
            gamma: state.gamma.clone(),
            iterations: state.iteration,
            primal_residual_norm: r_norm,
            dual_residual_norm: s_norm,
            eps_primal: eps_pri,
            eps_dual,
            converged,
            state,
        })
    }
}

/// Solves the mean-shift subproblem for the current memberships and precision.
pub fn solve_delta(
    yc: &CenteredDataset,
    g: &[f64],
    omega: &DMatrix<f64>,
    lambda_delta: f64,
    d: &PenaltyOperator,
    cfg: &AdmmConfig,
    warm: Option<&AdmmState>,
) -> Result<AdmmResult> {
    DeltaSubproblem::from_data(yc, g, omega, lambda_delta, *d)?.solve(cfg, warm)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(omega: &DMatrix<f64>, lambda: f64) -> DeltaSubproblem<'_> {
        // n = 2, g = (0.5, 0.5), y = (1, 1)
        let yc = CenteredDataset::unlabeled(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        DeltaSubproblem::from_data(&yc, &[0.5, 0.5], omega, lambda, PenaltyOperator::fused(1).unwrap())
            .unwrap()
    }

    #[test]
    fn single_feature_least_squares() {
        let omega = DMatrix::identity(1, 1);
        let res = scalar_problem(&omega, 0.0).solve(&AdmmConfig::default(), None).unwrap();
        assert!(res.converged);
        assert!((res.delta[0] - 2.0).abs() < 1e-6, "{:?}", res.delta);
    }

    #[test]
    fn single_feature_soft_threshold() {
        let omega = DMatrix::identity(1, 1);
        let cfg = AdmmConfig {
            eps_abs: 1e-12,
            eps_rel: 1e-12,
            ..AdmmConfig::default()
        };
        let res = scalar_problem(&omega, 0.25).solve(&cfg, None).unwrap();
        assert!(res.converged);
        assert!((res.delta[0] - 1.5).abs() < 1e-8, "{:?}", res.delta);
    }

    #[test]
    fn zero_memberships_give_zero_shift() {
        let yc = CenteredDataset::unlabeled(DMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64));
        let omega = DMatrix::identity(3, 3);
        let d = PenaltyOperator::fused(3).unwrap();
        let res = solve_delta(&yc, &[0.0; 4], &omega, 0.5, &d, &AdmmConfig::default(), None).unwrap();
        assert!(res.converged);
        assert!(res.delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparsity_adjustment_uses_identity_rows_only() {
        // Strong lambda: every lasso coordinate of gamma collapses.
        let yc = CenteredDataset::unlabeled(DMatrix::from_row_slice(2, 3, &[0.1, 0.1, 0.1, 0.1, 0.1, 0.1]));
        let omega = DMatrix::identity(3, 3);
        let d = PenaltyOperator::fused(3).unwrap();
        let res = solve_delta(&yc, &[0.5, 0.5], &omega, 10.0, &d, &AdmmConfig::default(), None).unwrap();
        for j in 0..3 {
            assert_eq!(res.gamma[d.identity_row(j)], 0.0);
            assert_eq!(res.delta[j], 0.0);
        }
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let yc = CenteredDataset::unlabeled(DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3));
        let omega = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.2 });
        let d = PenaltyOperator::fused(4).unwrap();
        let g = [0.1, 0.2, 0.3, 0.0, 0.25, 0.4];
        let cfg = AdmmConfig::default();
        let cold = solve_delta(&yc, &g, &omega, 0.3, &d, &cfg, None).unwrap();
        assert!(cold.converged);
        let warm = solve_delta(&yc, &g, &omega, 0.3, &d, &cfg, Some(&cold.state)).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= 2, "{} iterations", warm.iterations);
    }

    #[test]
    fn warm_start_dimension_mismatch() {
        let omega = DMatrix::identity(1, 1);
        let bad = AdmmState::cold(3, 1.0);
        assert!(scalar_problem(&omega, 0.0).solve(&AdmmConfig::default(), Some(&bad)).is_err());
    }

    #[test]
    fn iteration_cap_is_flagged_not_raised() {
        let yc = CenteredDataset::unlabeled(DMatrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.2));
        let omega = DMatrix::identity(4, 4);
        let d = PenaltyOperator::fused(4).unwrap();
        let cfg = AdmmConfig {
            max_iter: 1,
            eps_abs: 1e-14,
            eps_rel: 1e-14,
            ..AdmmConfig::default()
        };
        let res = solve_delta(&yc, &[0.3; 5], &omega, 0.1, &d, &cfg, None).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn non_positive_definite_system_is_numerical_error() {
        let omega = DMatrix::from_element(1, 1, -10.0);
        let p = scalar_problem(&omega, 0.0);
        match p.solve(&AdmmConfig::default(), None) {
            Err(Error::Numerical { iteration, .. }) => assert_eq!(iteration, Some(0)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
