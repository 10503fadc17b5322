//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sparsepmm::admm::DeltaSubproblem;
use sparsepmm::data::CenteredDataset;
use sparsepmm::fitter::{FitConfig, FitReport};
use sparsepmm::AdmmConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `A A' / p + c I` with Gaussian `A`.
pub fn random_spd(p: usize, ridge: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| normal(rng));
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * ridge
}

/// Sample covariance `X'X / n` of Gaussian rows with covariance `sigma`.
pub fn sample_scatter(sigma: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = sigma.nrows();
    let l = sigma.clone().cholesky().unwrap().l();
    let z = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let x = z * l.transpose();
    x.tr_mul(&x) / n as f64
}

/// Dense `(2p - 1) x p` operator: differences on top, identity below. For
/// `p = 1` just the identity.
pub fn dense_d(p: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(2 * p - 1, p);
    for j in 0..p.saturating_sub(1) {
        d[(j, j)] = -1.0;
        d[(j, j + 1)] = 1.0;
    }
    for j in 0..p {
        d[(p - 1 + j, j)] = 1.0;
    }
    d
}

/// Smallest sup-norm stationarity residual of the mean-shift subproblem
/// `w Omega delta - b + lambda D' s = 0` over subgradients `s` that equal
/// `sign(gamma_k)` where `gamma_k != 0` and lie in `[-1, 1]` elsewhere.
///
/// The free part of `s` minimizes the squared residual by projected gradient,
/// which bounds the best sup-norm residual from above.
pub fn delta_kkt_residual(
    omega: &DMatrix<f64>,
    weight: f64,
    linear: &DVector<f64>,
    lambda: f64,
    delta: &[f64],
    gamma: &[f64],
) -> f64 {
    let p = delta.len();
    let d = dense_d(p);
    let dv = DVector::from_column_slice(delta);
    let f = omega * &dv * weight - linear;
    let m = gamma.len();
    let mut s = DVector::from_fn(m, |k, _| if gamma[k] != 0.0 { gamma[k].signum() } else { 0.0 });
    let free: Vec<usize> = (0..m).filter(|&k| gamma[k] == 0.0).collect();
    let resid = |s: &DVector<f64>| &f + d.tr_mul(s) * lambda;
    if lambda > 0.0 && !free.is_empty() {
        let lip = lambda * lambda * (d.transpose() * &d).norm();
        let step = 1.0 / lip;
        for _ in 0..20_000 {
            let r = resid(&s);
            let grad = &d * r * lambda;
            let mut moved: f64 = 0.0;
            for &k in &free {
                let new = (s[k] - step * grad[k]).clamp(-1.0, 1.0);
                moved = moved.max((new - s[k]).abs());
                s[k] = new;
            }
            if moved < 1e-15 {
                break;
            }
        }
    }
    resid(&s).amax()
}

pub fn subproblem_kkt(sub: &DeltaSubproblem<'_>, omega: &DMatrix<f64>, lambda: f64, delta: &[f64], gamma: &[f64]) -> f64 {
    delta_kkt_residual(omega, sub.weight(), sub.linear(), lambda, delta, gamma)
}

/// `log det - tr(S Omega) - lambda * sum |Omega_jh|` for a 2x2 matrix.
pub fn glasso_objective_2x2(a: f64, b: f64, c: f64, s: &DMatrix<f64>, lambda: f64) -> f64 {
    let det = a * c - b * b;
    if a <= 0.0 || det <= 0.0 {
        return f64::NEG_INFINITY;
    }
    det.ln() - (s[(0, 0)] * a + 2.0 * s[(0, 1)] * b + s[(1, 1)] * c) - lambda * (a.abs() + 2.0 * b.abs() + c.abs())
}

/// Maximizer of the 2x2 graphical lasso objective by successively refined
/// grid search around the best point.
pub fn glasso_grid_2x2(s: &DMatrix<f64>, lambda: f64) -> (f64, f64, f64) {
    let (mut ca, mut cb, mut cc) = (1.0 / s[(0, 0)], 0.0, 1.0 / s[(1, 1)]);
    let mut half = [ca * 2.0, ca.max(cc) * 2.0, cc * 2.0];
    let k = 40;
    for _ in 0..12 {
        let mut best = (f64::NEG_INFINITY, ca, cb, cc);
        for i in 0..=k {
            let a = ca + half[0] * (2.0 * i as f64 / k as f64 - 1.0);
            for j in 0..=k {
                let b = cb + half[1] * (2.0 * j as f64 / k as f64 - 1.0);
                for l in 0..=k {
                    let c = cc + half[2] * (2.0 * l as f64 / k as f64 - 1.0);
                    let v = glasso_objective_2x2(a, b, c, s, lambda);
                    if v > best.0 {
                        best = (v, a, b, c);
                    }
                }
            }
        }
        (ca, cb, cc) = (best.1, best.2, best.3);
        for h in &mut half {
            *h *= 0.25;
        }
    }
    (ca, cb, cc)
}

/// Unpenalized alternating oracle: least-squares start, then exact block
/// updates `delta = sum g y / sum g^2`, `Omega = S^-1`, `g = clip(projection)`
/// until nothing moves.
pub struct Oracle {
    pub delta: DVector<f64>,
    pub g: DVector<f64>,
    pub omega: DMatrix<f64>,
}

pub fn unpenalized_oracle(yc: &CenteredDataset, g_max: f64) -> Oracle {
    let y = yc.yc();
    let (n, p) = (yc.n(), yc.p());
    let labels = yc.labels();
    let clip = |v: f64| v.clamp(0.0, g_max);
    let mut g = DVector::from_fn(n, |i, _| labels[i].unwrap_or(g_max / 2.0));
    let mut delta = DVector::zeros(p);
    let rss = |delta: &DVector<f64>, g: &DVector<f64>| (y - g * delta.transpose()).norm_squared();
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        delta = y.tr_mul(&g) / g.norm_squared();
        let proj = y * &delta / delta.norm_squared();
        for i in 0..n {
            if labels[i].is_none() {
                g[i] = clip(proj[i]);
            }
        }
        let r = rss(&delta, &g);
        if prev.is_finite() && prev - r <= 1e-8 * prev {
            break;
        }
        prev = r;
    }
    let mut omega = DMatrix::zeros(p, p);
    for _ in 0..200_000 {
        let new_delta = y.tr_mul(&g) / g.norm_squared();
        let r = y - &g * new_delta.transpose();
        let s = r.tr_mul(&r) / n as f64;
        let new_omega = s.try_inverse().unwrap();
        let a = &new_omega * &new_delta;
        let q = new_delta.dot(&a);
        let proj = y * &a / q;
        let mut new_g = g.clone();
        for i in 0..n {
            if labels[i].is_none() {
                new_g[i] = clip(proj[i]);
            }
        }
        let change = (&new_delta - &delta).amax().max((&new_g - &g).amax());
        delta = new_delta;
        g = new_g;
        omega = new_omega;
        if change < 1e-14 {
            break;
        }
    }
    Oracle { delta, g, omega }
}

/// Data from the model with diagonal precision `omega_diag`, shift `delta`
/// and memberships `g`; `labeled` samples carry their true level.
pub fn model_data(
    delta: &[f64],
    g: &[f64],
    omega_diag: f64,
    labeled: &[bool],
    rng: &mut ChaCha8Rng,
) -> CenteredDataset {
    let (n, p) = (g.len(), delta.len());
    let sd = omega_diag.sqrt().recip();
    let y = DMatrix::from_fn(n, p, |i, j| g[i] * delta[j] + sd * normal(rng));
    let labels = (0..n).map(|i| labeled[i].then_some(g[i])).collect();
    CenteredDataset::new(y, labels).unwrap()
}

/// Relative error `||a - b||_inf / max(||b||_inf, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    num / den
}

/// Model data with `n` samples: 30% adulterated at levels {0.1, 0.2, 0.3},
/// 20% labeled (proportionally), diagonal precision 25.
pub fn instance(seed: u64, n: usize, p: usize) -> CenteredDataset {
    let mut r = rng(seed);
    let delta: Vec<f64> = (0..p).map(|j| [1.2, -0.8, 0.6, 1.5, -1.0][j % 5]).collect();
    let mut g = vec![0.0; n];
    let n_adult = (0.3 * n as f64).round() as usize;
    for gi in g.iter_mut().take(n_adult) {
        *gi = [0.1, 0.2, 0.3][r.random_range(0..3)];
    }
    let labeled: Vec<bool> = (0..n)
        .map(|i| if i < n_adult { i < (0.2 * n_adult as f64).round() as usize } else { i - n_adult < 14 })
        .collect();
    model_data(&delta, &g, 25.0, &labeled, &mut r)
}

pub fn tight() -> FitConfig {
    FitConfig {
        outer_tol: 1e-14,
        outer_max_iter: 5000,
        admm: AdmmConfig {
            eps_abs: 1e-10,
            eps_rel: 1e-10,
            max_iter: 100_000,
            ..AdmmConfig::default()
        },
        glasso: sparsepmm::GlassoConfig {
            tol: 1e-10,
            max_iter: 1000,
        },
        ..FitConfig::default()
    }
}

/// `max(|delta - GLS(g)|_inf, |g - clip(projection)|_inf)` at the reported fit.
pub fn stationarity_residual(yc: &CenteredDataset, rep: &FitReport) -> f64 {
    let y = yc.yc();
    let g = DVector::from_column_slice(rep.g());
    let delta = DVector::from_column_slice(rep.delta());
    let gls = y.tr_mul(&g) / g.norm_squared();
    let a = rep.omega() * &delta;
    let proj = y * &a / delta.dot(&a);
    let mut worst = (&delta - gls).amax();
    for (i, l) in yc.labels().iter().enumerate() {
        if l.is_none() {
            worst = worst.max((g[i] - proj[i].clamp(0.0, 0.5)).abs());
        }
    }
    worst
}
