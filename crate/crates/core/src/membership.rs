//! Closed-form update of the adulteration levels.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CenteredDataset, G_MAX};
use crate::error::{Error, Result};
use crate::penalty::soft_threshold;

/// Adulteration levels with the supervision mask. Labeled entries are constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipVector {
    g: Vec<f64>,
    fixed: Vec<bool>,
}

impl MembershipVector {
    pub fn new(g: Vec<f64>, fixed: Vec<bool>) -> Result<Self> {
        if g.len() != fixed.len() {
            return Err(Error::InvalidArgument("g and mask lengths differ".into()));
        }
        if let Some(v) = g.iter().find(|v| !(0.0..=G_MAX).contains(*v)) {
            return Err(Error::InvalidArgument(format!("membership {v} outside [0, {G_MAX}]")));
        }
        Ok(Self { g, fixed })
    }

    /// Labeled entries take their label, the others `fill`.
    pub fn seeded(labels: &[Option<f64>], fill: f64) -> Result<Self> {
        Self::new(
            labels.iter().map(|l| l.unwrap_or(fill)).collect(),
            labels.iter().map(Option::is_some).collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Unlabeled entries different from zero.
    pub fn free_nonzero_count(&self) -> usize {
        self.g
            .iter()
            .zip(&self.fixed)
            .filter(|(v, f)| !**f && **v != 0.0)
            .count()
    }

    pub(crate) fn set_free(&mut self, values: impl IntoIterator<Item = (usize, f64)>) {
        for (i, v) in values {
            if !self.fixed[i] {
                self.g[i] = v;
            }
        }
    }
}

/// `g_i = clip(S(delta' Omega yc_i; lambda_g) / (delta' Omega delta), 0, g_max)`
/// for every unlabeled sample.
///
/// Returns [`Error::DegenerateSignal`] when `delta' Omega delta` is zero.
pub fn update_g(
    yc: &CenteredDataset,
    delta: &[f64],
    omega: &DMatrix<f64>,
    lambda_g: f64,
    current: &MembershipVector,
    g_max: f64,
) -> Result<MembershipVector> {
    let (n, p) = (yc.n(), yc.p());
    if delta.len() != p || omega.shape() != (p, p) || current.len() != n {
        return Err(Error::InvalidArgument("membership update dimensions".into()));
    }
    if !(lambda_g.is_finite() && lambda_g >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_g = {lambda_g} must be >= 0")));
    }
    let dv = DVector::from_column_slice(delta);
    let omega_delta = omega * &dv;
    let curvature = dv.dot(&omega_delta);
    if !(curvature > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    let projections = yc.yc() * omega_delta;
    let mut next = current.clone();
    let updated: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .filter(|&i| !current.fixed[i])
        .map(|i| (i, clip(soft_threshold(projections[i], lambda_g) / curvature, g_max)))
        .collect();
    next.set_free(updated);
    Ok(next)
}

pub(crate) fn clip(v: f64, g_max: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else if v >= g_max {
        g_max
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1_data(scale: f64) -> CenteredDataset {
        CenteredDataset::unlabeled(DMatrix::from_row_slice(1, 3, &[scale, 0.0, 0.0]))
    }

    fn start(n: usize) -> MembershipVector {
        MembershipVector::new(vec![0.25; n], vec![false; n]).unwrap()
    }

    #[test]
    fn exact_projection() {
        let omega = DMatrix::identity(3, 3);
        let g = update_g(&e1_data(0.3), &[1.0, 0.0, 0.0], &omega, 0.0, &start(1), G_MAX).unwrap();
        assert!((g.values()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn clipped_at_half() {
        let omega = DMatrix::identity(3, 3);
        let g = update_g(&e1_data(0.8), &[1.0, 0.0, 0.0], &omega, 0.1, &start(1), G_MAX).unwrap();
        assert_eq!(g.values()[0], 0.5);
    }

    #[test]
    fn shrunk_to_zero() {
        let omega = DMatrix::identity(3, 3);
        let g = update_g(&e1_data(0.05), &[1.0, 0.0, 0.0], &omega, 0.1, &start(1), G_MAX).unwrap();
        assert_eq!(g.values()[0], 0.0);
        let neg = update_g(&e1_data(-0.4), &[1.0, 0.0, 0.0], &omega, 0.1, &start(1), G_MAX).unwrap();
        assert_eq!(neg.values()[0], 0.0);
    }

    #[test]
    fn labeled_entries_untouched() {
        let yc = CenteredDataset::unlabeled(DMatrix::from_row_slice(2, 1, &[5.0, 0.1]));
        let cur = MembershipVector::new(vec![0.2, 0.0], vec![true, false]).unwrap();
        let g = update_g(&yc, &[1.0], &DMatrix::identity(1, 1), 0.0, &cur, G_MAX).unwrap();
        assert_eq!(g.values()[0].to_bits(), 0.2f64.to_bits());
        assert!((g.values()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_shift_is_degenerate() {
        let omega = DMatrix::identity(3, 3);
        assert!(matches!(
            update_g(&e1_data(0.3), &[0.0; 3], &omega, 0.0, &start(1), G_MAX),
            Err(Error::DegenerateSignal)
        ));
    }
}
