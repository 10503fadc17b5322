//! Synthetic spectra with known adulteration levels, mean shift and precision.

pub mod bspline;
pub mod scenario;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{SpectraDataset, G_MAX};
use crate::error::{Error, Result};

pub use bspline::{bspline_delta, BSplineBasis};
pub use scenario::{
    run_scenario, BenchConfig, Cell, CellAggregate, LambdaPolicy, ReplicateMetrics, ReplicateResult, Scenario,
    ScenarioResults,
};

/// Default per-feature precision (noise sd 0.2).
pub const DEFAULT_OMEGA: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaShape {
    /// Truncated Mexican hat times `signal_scale`, with `mu_pure = 0`.
    MexicanHat,
    /// Localized B-spline perturbation of a random spline mean.
    Bspline { support_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub shape: DeltaShape,
    pub signal_scale: f64,
    pub adulterated_fraction: f64,
    pub g_levels: Vec<f64>,
    pub labeled_fraction: f64,
    /// One value per feature, or a single value used for all of them.
    pub omega_diag: Vec<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 100,
            shape: DeltaShape::MexicanHat,
            signal_scale: 1.0,
            adulterated_fraction: 0.3,
            g_levels: vec![0.1, 0.2, 0.3],
            labeled_fraction: 0.2,
            omega_diag: vec![DEFAULT_OMEGA],
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.p < 2 {
            return bad(format!("need n >= 1 and p >= 2, got n = {}, p = {}", self.n, self.p));
        }
        for (name, f) in [
            ("adulterated_fraction", self.adulterated_fraction),
            ("labeled_fraction", self.labeled_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} = {f} must lie in [0, 1]"));
            }
        }
        if self.n as f64 * self.adulterated_fraction < 1.0 {
            return bad("n * adulterated_fraction must be at least 1".into());
        }
        if self.g_levels.is_empty() || self.g_levels.iter().any(|g| !(*g > 0.0 && *g <= G_MAX)) {
            return bad(format!("g_levels must be nonempty and inside (0, {G_MAX}]"));
        }
        if !(self.signal_scale.is_finite() && self.signal_scale > 0.0) {
            return bad(format!("signal_scale = {} must be positive", self.signal_scale));
        }
        if !(self.omega_diag.len() == 1 || self.omega_diag.len() == self.p) {
            return bad(format!("omega_diag needs 1 or {} values", self.p));
        }
        if self.omega_diag.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("omega_diag entries must be positive".into());
        }
        if let DeltaShape::Bspline { support_fraction } = self.shape {
            if !(support_fraction > 0.0 && support_fraction < 1.0) {
                return bad(format!("support_fraction = {support_fraction} must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn omega_values(&self) -> Vec<f64> {
        if self.omega_diag.len() == 1 {
            vec![self.omega_diag[0]; self.p]
        } else {
            self.omega_diag.clone()
        }
    }

    pub fn adulterated_count(&self) -> usize {
        (self.n as f64 * self.adulterated_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub delta_true: Vec<f64>,
    pub g_true: Vec<f64>,
    /// Diagonal of the true precision matrix.
    pub omega_diag: Vec<f64>,
    pub mu_pure: Vec<f64>,
    /// Sorted sample indices.
    pub labeled_ids: Vec<usize>,
    pub adulterated_ids: Vec<usize>,
}

impl GroundTruth {
    pub fn omega_true(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.omega_diag))
    }

    pub fn labeled_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.g_true.len()];
        for &i in &self.labeled_ids {
            m[i] = true;
        }
        m
    }
}

/// Truncated Mexican hat `4 (1 - x^2) exp(-x^2 / 2)` on `p` points over `[-5, 5]`.
pub fn mexican_hat_delta(p: usize, scale: f64) -> Vec<f64> {
    (0..p)
        .map(|j| {
            let x = if p == 1 { 0.0 } else { -5.0 + 10.0 * j as f64 / (p - 1) as f64 };
            let f = 4.0 * (1.0 - x * x) * (-x * x / 2.0).exp();
            let t = if f > 2.4 {
                2.4
            } else if f < -1.6 {
                -1.6
            } else if (-0.4..=0.0).contains(&f) {
                0.0
            } else {
                f
            };
            t * scale
        })
        .collect()
}

/// Draws a dataset from the model with diagonal precision.
pub fn generate(cfg: &ScenarioConfig) -> Result<(SpectraDataset, GroundTruth)> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (delta, mu) = match cfg.shape {
        DeltaShape::MexicanHat => (mexican_hat_delta(p, cfg.signal_scale), vec![0.0; p]),
        DeltaShape::Bspline { support_fraction } => {
            let (d, mu) = bspline_delta(p, support_fraction, rng.random())?;
            (d.iter().map(|v| v * cfg.signal_scale).collect(), mu)
        }
    };

    let n_adult = cfg.adulterated_count().min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (adult, pure) = order.split_at(n_adult);
    let mut g_true = vec![0.0; n];
    let mut adulterated_ids = adult.to_vec();
    adulterated_ids.sort_unstable();
    for &i in &adulterated_ids {
        g_true[i] = cfg.g_levels[rng.random_range(0..cfg.g_levels.len())];
    }

    let n_labeled = (cfg.labeled_fraction * n as f64).round() as usize;
    let mut lab_adult = (cfg.labeled_fraction * n_adult as f64).round() as usize;
    let mut lab_pure = n_labeled.saturating_sub(lab_adult);
    if lab_adult > adult.len() || lab_pure > pure.len() {
        log::warn!(
            "cannot label {lab_adult} adulterated and {lab_pure} pure samples out of {} and {}; rounding down",
            adult.len(),
            pure.len()
        );
        lab_adult = lab_adult.min(adult.len());
        lab_pure = lab_pure.min(pure.len());
    }
    let mut adult_pool = adulterated_ids.clone();
    adult_pool.shuffle(&mut rng);
    let mut pure_pool: Vec<usize> = pure.to_vec();
    pure_pool.sort_unstable();
    pure_pool.shuffle(&mut rng);
    let mut labeled_ids: Vec<usize> = adult_pool[..lab_adult]
        .iter()
        .chain(&pure_pool[..lab_pure])
        .copied()
        .collect();
    labeled_ids.sort_unstable();

    let omega = cfg.omega_values();
    let sd: Vec<f64> = omega.iter().map(|w| w.sqrt().recip()).collect();
    let mut y = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            y[(i, j)] = mu[j] + delta[j] * g_true[i] + sd[j] * z;
        }
    }

    let mut known = vec![None; n];
    for &i in &labeled_ids {
        known[i] = Some(g_true[i]);
    }
    let ds = SpectraDataset::from_matrix(y, known)?.with_mu_pure(DVector::from_column_slice(&mu))?;
    let truth = GroundTruth {
        delta_true: delta,
        g_true,
        omega_diag: omega,
        mu_pure: mu,
        labeled_ids,
        adulterated_ids,
    };
    Ok((ds, truth))
}
