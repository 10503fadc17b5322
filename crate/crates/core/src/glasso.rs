//! Graphical lasso by blockwise coordinate descent.
//!
//! Maximizes `log det(Omega) - tr(S Omega) - lambda * sum_jh |Omega_jh|` over
//! positive-definite `Omega`. The diagonal is penalized too, so the working
//! covariance keeps `W_jj = S_jj + lambda`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::CenteredDataset;
use crate::error::{Error, Result};
use crate::penalty::soft_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassoConfig {
    /// Relative tolerance on the mean absolute change of the off-diagonal of
    /// `W` over one sweep, scaled by the mean absolute off-diagonal of `S`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionEstimate {
    pub omega: DMatrix<f64>,
    /// `omega^-1`.
    pub covariance: DMatrix<f64>,
    /// Nonzero off-diagonal entries, counting both triangles.
    pub nnz_offdiag: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl PrecisionEstimate {
    /// Wraps a symmetric positive-definite precision matrix.
    pub fn from_omega(omega: DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(&omega)
            .ok_or_else(|| Error::numerical("precision matrix is not positive definite"))?;
        let covariance = symmetrized(&chol.inverse());
        Ok(Self {
            nnz_offdiag: count_offdiag(&omega),
            omega,
            covariance,
            iterations: 0,
            converged: true,
        })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::numerical("diagonal precision entries must be positive"));
        }
        let p = diag.len();
        Ok(Self {
            omega: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            covariance: DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / diag[i] } else { 0.0 }),
            nnz_offdiag: 0,
            iterations: 0,
            converged: true,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }

    pub fn log_det(&self) -> Result<f64> {
        log_det(&self.omega)
    }
}

/// `S = (1/n) sum_i r_i r_i'` with `r_i = yc_i - g_i delta`.
pub fn scatter_matrix(yc: &CenteredDataset, delta: &[f64], g: &[f64]) -> Result<DMatrix<f64>> {
    let (n, p) = (yc.n(), yc.p());
    if delta.len() != p || g.len() != n {
        return Err(Error::InvalidArgument(format!(
            "scatter: delta {} vs p {p}, g {} vs n {n}",
            delta.len(),
            g.len()
        )));
    }
    let r = residuals(yc.yc(), delta, g);
    let mut s = r.tr_mul(&r) / n as f64;
    s.fill_lower_triangle_with_upper_triangle();
    Ok(s)
}

pub(crate) fn residuals(yc: &DMatrix<f64>, delta: &[f64], g: &[f64]) -> DMatrix<f64> {
    let mut r = yc.clone();
    for (j, mut col) in r.column_iter_mut().enumerate() {
        let dj = delta[j];
        if dj != 0.0 {
            for (i, v) in col.iter_mut().enumerate() {
                *v -= g[i] * dj;
            }
        }
    }
    r
}

/// `log det(Omega) - tr(S Omega) - lambda * ||Omega||_1`.
pub fn objective(omega: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let ld = log_det(omega)?;
    let tr = omega.component_mul(s).sum();
    let l1: f64 = omega.iter().map(|v| v.abs()).sum();
    Ok(ld - tr - lambda * l1)
}

pub fn log_det(omega: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(omega)
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Largest absolute off-diagonal entry of `S`; any `lambda` at or above it
/// yields a diagonal estimate.
pub fn critical_lambda(s: &DMatrix<f64>) -> f64 {
    let p = s.nrows();
    let mut m: f64 = 0.0;
    for j in 0..p {
        for i in 0..p {
            if i != j {
                m = m.max(s[(i, j)].abs());
            }
        }
    }
    m
}

/// Worst violation of the stationarity conditions `W - S = lambda * sign(Omega)`
/// (entries where `Omega` is nonzero) and `|W - S| <= lambda` (zeros), with
/// `W = Omega^-1` taken from the estimate.
pub fn kkt_residual(est: &PrecisionEstimate, s: &DMatrix<f64>, lambda: f64) -> f64 {
    let p = est.p();
    let mut worst: f64 = 0.0;
    for j in 0..p {
        for i in 0..p {
            let grad = est.covariance[(i, j)] - s[(i, j)];
            let o = est.omega[(i, j)];
            let v = if o != 0.0 {
                (grad - lambda * o.signum()).abs()
            } else {
                (grad.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    worst
}

/// Solves the graphical lasso for scatter `s`. `warm` seeds the column
/// coefficients from a previous estimate (and its covariance when that is
/// still feasible); a failed warm-started solve is repeated from scratch.
pub fn solve_omega(
    s: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
    warm: Option<&PrecisionEstimate>,
) -> Result<PrecisionEstimate> {
    let p = s.nrows();
    if s.ncols() != p || p == 0 {
        return Err(Error::InvalidArgument("scatter matrix must be square and nonempty".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_omega = {lambda} must be >= 0")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("scatter matrix has non-finite entries"));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument("glasso tol and max_iter must be positive".into()));
    }

    let mut w = s.clone();
    for j in 0..p {
        w[(j, j)] = s[(j, j)] + lambda;
    }
    if cholesky(&w).is_none() {
        return Err(Error::numerical(if lambda == 0.0 {
            "scatter matrix is singular; use lambda_omega > 0"
        } else {
            "S + lambda I is not positive definite"
        }));
    }

    let cold_w = w.clone();
    if let Some(prev) = warm.filter(|e| e.p() == p && e.omega.iter().all(|v| v.is_finite())) {
        // beta[:, j] holds the lasso coefficients of column j (entry j unused).
        let mut beta = DMatrix::zeros(p, p);
        for j in 0..p {
            let ojj = prev.omega[(j, j)];
            for k in 0..p {
                if k != j {
                    beta[(k, j)] = -prev.omega[(k, j)] / ojj;
                }
            }
        }
        // previous covariance, if still within lambda of S off the diagonal
        let mut w_warm = prev.covariance.clone();
        let mut feasible = true;
        for j in 0..p {
            w_warm[(j, j)] = s[(j, j)] + lambda;
            for k in 0..p {
                if k != j && (w_warm[(k, j)] - s[(k, j)]).abs() > lambda {
                    feasible = false;
                }
            }
        }
        let w0 = if feasible && cholesky(&w_warm).is_some() { w_warm } else { w.clone() };
        match blockwise(s, lambda, cfg, w0, beta) {
            Ok(est) => return Ok(est),
            Err(e) => log::debug!("warm-started graphical lasso failed ({e}); restarting cold"),
        }
    }
    blockwise(s, lambda, cfg, cold_w, DMatrix::zeros(p, p))
}

/// Blockwise coordinate ascent from covariance `w` and column coefficients `beta`.
fn blockwise(
    s: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
    mut w: DMatrix<f64>,
    mut beta: DMatrix<f64>,
) -> Result<PrecisionEstimate> {
    let p = s.nrows();
    let off_count = (p * (p - 1)) as f64;
    let mean_abs_off = if p > 1 {
        (s.iter().map(|v| v.abs()).sum::<f64>() - s.diagonal().iter().map(|v| v.abs()).sum::<f64>())
            / off_count
    } else {
        0.0
    };
    let scale = if mean_abs_off > 0.0 {
        mean_abs_off
    } else {
        s.diagonal().iter().map(|v| v.abs()).sum::<f64>() / p as f64
    };
    let inner_tol = cfg.tol / 10.0 * scale;
    let outer_threshold = cfg.tol * mean_abs_off;

    let mut v = vec![0.0; p];
    let mut iterations = 0;
    let mut converged = p == 1;
    if p > 1 {
        for sweep in 1..=cfg.max_iter {
            iterations = sweep;
            let mut change = 0.0;
            for j in 0..p {
                lasso_column(&w, s, lambda, j, beta.column_mut(j).as_mut_slice(), &mut v, inner_tol);
                for k in 0..p {
                    if k != j {
                        change += (v[k] - w[(k, j)]).abs();
                        w[(k, j)] = v[k];
                        w[(j, k)] = v[k];
                    }
                }
            }
            if !change.is_finite() {
                return Err(Error::numerical_at("graphical lasso diverged", sweep));
            }
            if change / off_count <= outer_threshold {
                converged = true;
                break;
            }
        }
    }

    let mut omega = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut w12_beta = 0.0;
        for k in 0..p {
            if k != j {
                w12_beta += w[(k, j)] * beta[(k, j)];
            }
        }
        let ojj = 1.0 / (w[(j, j)] - w12_beta);
        omega[(j, j)] = ojj;
        for k in 0..p {
            if k != j {
                omega[(k, j)] = -beta[(k, j)] * ojj;
            }
        }
    }
    for j in 0..p {
        for k in (j + 1)..p {
            let (a, b) = (omega[(k, j)], omega[(j, k)]);
            let m = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            omega[(k, j)] = m;
            omega[(j, k)] = m;
        }
    }
    let chol = cholesky(&omega)
        .ok_or_else(|| Error::numerical_at("graphical lasso estimate is not positive definite", iterations))?;
    let covariance = symmetrized(&chol.inverse());
    Ok(PrecisionEstimate {
        nnz_offdiag: count_offdiag(&omega),
        omega,
        covariance,
        iterations,
        converged,
    })
}

/// Cyclic coordinate descent for
/// `min_b 1/2 b' W11 b - b' s12 + lambda ||b||_1` over the coordinates `k != j`.
/// On return `v = W11 b` (with `v[j]` unspecified).
fn lasso_column(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    j: usize,
    b: &mut [f64],
    v: &mut [f64],
    tol: f64,
) {
    let p = w.nrows();
    let ws = w.as_slice();
    v.iter_mut().for_each(|x| *x = 0.0);
    for l in 0..p {
        if l != j && b[l] != 0.0 {
            let col = &ws[l * p..(l + 1) * p];
            for k in 0..p {
                v[k] += b[l] * col[k];
            }
        }
    }
    let mut last_signs: Vec<i8> = Vec::new();
    let mut next_exact = 2;
    for pass in 0..1000 {
        let mut max_delta: f64 = 0.0;
        for k in 0..p {
            if k == j {
                continue;
            }
            let a = ws[k * p + k];
            let partial = s[(k, j)] - (v[k] - a * b[k]);
            let new = soft_threshold(partial, lambda) / a;
            let diff = new - b[k];
            if diff != 0.0 {
                b[k] = new;
                let col = &ws[k * p..(k + 1) * p];
                for (vi, wi) in v.iter_mut().zip(col) {
                    *vi += diff * wi;
                }
                max_delta = max_delta.max(diff.abs() * a);
            }
        }
        if max_delta <= tol {
            break;
        }
        // Once the sign pattern settles, try solving the active set exactly.
        let signs: Vec<i8> = b.iter().map(|&x| sign_of(x)).collect();
        if pass >= next_exact && signs == last_signs {
            if active_set_solve(w, s, lambda, j, &signs, b, v, tol) {
                break;
            }
            next_exact = pass + 20;
        }
        last_signs = signs;
    }
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Solves `W_AA b_A = s_A - lambda sign_A` on the support of `signs` and keeps
/// the result if it satisfies the lasso optimality conditions.
#[allow(clippy::too_many_arguments)]
fn active_set_solve(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    j: usize,
    signs: &[i8],
    b: &mut [f64],
    v: &mut [f64],
    tol: f64,
) -> bool {
    let p = w.nrows();
    let active: Vec<usize> = (0..p).filter(|&k| k != j && signs[k] != 0).collect();
    if active.is_empty() {
        return false;
    }
    let m = active.len();
    let waa = DMatrix::from_fn(m, m, |a, c| w[(active[a], active[c])]);
    let rhs = DVector::from_fn(m, |a, _| s[(active[a], j)] - lambda * signs[active[a]] as f64);
    let Some(chol) = Cholesky::new(waa) else {
        return false;
    };
    let sol = chol.solve(&rhs);
    if active.iter().zip(sol.iter()).any(|(&k, &x)| sign_of(x) != signs[k]) {
        return false;
    }
    let mut wv = vec![0.0; p];
    for (&k, &x) in active.iter().zip(sol.iter()) {
        for (vi, wi) in wv.iter_mut().zip(w.column(k).iter()) {
            *vi += x * wi;
        }
    }
    let kkt_ok = (0..p)
        .filter(|&k| k != j && signs[k] == 0)
        .all(|k| (s[(k, j)] - wv[k]).abs() <= lambda + tol);
    if !kkt_ok {
        return false;
    }
    b.iter_mut().for_each(|x| *x = 0.0);
    for (&k, &x) in active.iter().zip(sol.iter()) {
        b[k] = x;
    }
    v.copy_from_slice(&wv);
    true
}

fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Cholesky::new(symmetrized(m))
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn count_offdiag(m: &DMatrix<f64>) -> usize {
    let p = m.nrows();
    let mut c = 0;
    for j in 0..p {
        for i in 0..p {
            if i != j && m[(i, j)] != 0.0 {
                c += 1;
            }
        }
    }
    c
}
