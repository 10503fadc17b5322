//! The sparse fused lasso operator `D`, soft-thresholding and the composite
//! penalty on `(g, delta, Omega)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Soft-thresholding `sign(x) * max(|x| - lambda, 0)`.
#[inline]
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Penalty strengths for the membership vector, the mean shift and the
/// precision matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lambda_g: f64,
    pub lambda_delta: f64,
    pub lambda_omega: f64,
}

impl Hyperparameters {
    pub fn new(lambda_g: f64, lambda_delta: f64, lambda_omega: f64) -> Result<Self> {
        let lam = Self {
            lambda_g,
            lambda_delta,
            lambda_omega,
        };
        lam.validate()?;
        Ok(lam)
    }

    pub fn zero() -> Self {
        Self {
            lambda_g: 0.0,
            lambda_delta: 0.0,
            lambda_omega: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("lambda_delta", self.lambda_delta),
            ("lambda_omega", self.lambda_omega),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// The `(2p - 1) x p` generalized lasso operator: `p - 1` adjacent-difference
/// rows (`-1` at `j`, `+1` at `j + 1`) stacked on top of the identity.
///
/// The structure is implicit; the operator has `3p - 2` nonzeros and every
/// product costs `O(p)`. With `p == 1` only the identity row remains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PenaltyOperator {
    p: usize,
}

/// Builds the sparse fused lasso operator for `p >= 2` features.
pub fn build_d(p: usize) -> Result<PenaltyOperator> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "the fused operator needs p >= 2 features, got {p}"
        )));
    }
    Ok(PenaltyOperator { p })
}

impl PenaltyOperator {
    /// Like [`build_d`] but also accepts `p == 1` (a pure lasso row), which the
    /// single-feature solver path uses.
    pub fn fused(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        Ok(Self { p })
    }

    pub fn cols(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        2 * self.p - 1
    }

    pub fn n_difference_rows(&self) -> usize {
        self.p - 1
    }

    /// Row of `D` carrying the element-wise lasso penalty on feature `j`.
    pub fn identity_row(&self, j: usize) -> usize {
        self.p - 1 + j
    }

    /// `(row, col, value)` triplets in row-major order.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let diffs = (0..self.p - 1).flat_map(|j| [(j, j, -1.0), (j, j + 1, 1.0)]);
        let ident = (0..self.p).map(move |j| (self.p - 1 + j, j, 1.0));
        diffs.chain(ident)
    }

    /// `out = D x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.p);
        debug_assert_eq!(out.len(), self.rows());
        let m = self.p - 1;
        for j in 0..m {
            out[j] = x[j + 1] - x[j];
        }
        out[m..].copy_from_slice(x);
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(x, &mut out);
        out
    }

    /// `out = D' z`.
    pub fn apply_transpose_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.rows());
        debug_assert_eq!(out.len(), self.p);
        let m = self.p - 1;
        out.copy_from_slice(&z[m..]);
        for j in 0..m {
            out[j] -= z[j];
            out[j + 1] += z[j];
        }
    }

    pub fn apply_transpose(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.apply_transpose_into(z, &mut out);
        out
    }

    /// `||D x||_1` without materializing `D x`.
    pub fn l1_of_apply(&self, x: &[f64]) -> f64 {
        let diffs: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        diffs + x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Dense `D' D`: the tridiagonal difference Laplacian plus the identity.
    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.p;
        let mut g = DMatrix::identity(p, p);
        for j in 0..p - 1 {
            g[(j, j)] += 1.0;
            g[(j + 1, j + 1)] += 1.0;
            g[(j, j + 1)] -= 1.0;
            g[(j + 1, j)] -= 1.0;
        }
        g
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows(), self.p);
        for (r, c, v) in self.nonzeros() {
            d[(r, c)] = v;
        }
        d
    }
}

/// `lambda_g ||g||_1 + lambda_delta ||D delta||_1 + lambda_omega ||Omega||_1`,
/// where `||Omega||_1` sums the absolute values of all entries, diagonal included.
pub fn penalty_value(
    g: &[f64],
    delta: &[f64],
    omega: &DMatrix<f64>,
    lam: &Hyperparameters,
    d: &PenaltyOperator,
) -> Result<f64> {
    let p = d.cols();
    if delta.len() != p || omega.nrows() != p || omega.ncols() != p {
        return Err(Error::InvalidArgument(format!(
            "penalty dimensions: delta {}, omega {}x{}, operator for p = {p}",
            delta.len(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let g_l1: f64 = g.iter().map(|v| v.abs()).sum();
    let omega_l1: f64 = omega.iter().map(|v| v.abs()).sum();
    Ok(lam.lambda_g * g_l1 + lam.lambda_delta * d.l1_of_apply(delta) + lam.lambda_omega * omega_l1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d_for_three_features() {
        let d = build_d(3).unwrap().to_dense();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(5, 3, &[
            -1.0, 1.0, 0.0,
            0.0, -1.0, 1.0,
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ]);
        assert_eq!(d, expected);
    }

    #[test]
    fn d_kills_constants_in_difference_rows() {
        let d = build_d(6).unwrap();
        let out = d.apply(&[2.5; 6]);
        assert!(out[..5].iter().all(|&v| v == 0.0));
        assert!(out[5..].iter().all(|&v| v == 2.5));
    }

    #[test]
    fn d_two_features() {
        let d = build_d(2).unwrap();
        assert_eq!(d.apply(&[1.0, -1.0]), vec![-2.0, 1.0, -1.0]);
        assert_eq!(d.l1_of_apply(&[1.0, -1.0]), 4.0);
    }

    #[test]
    fn d_rejects_single_feature() {
        assert!(build_d(1).is_err());
        assert!(build_d(0).is_err());
        assert_eq!(PenaltyOperator::fused(1).unwrap().rows(), 1);
    }

    #[test]
    fn row_structure() {
        let d = build_d(7).unwrap();
        let dense = d.to_dense();
        assert_eq!(d.nonzeros().count(), 3 * 7 - 2);
        for r in 0..6 {
            let row = dense.row(r);
            assert_eq!(row.sum(), 0.0);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 2);
        }
        for r in 6..13 {
            let row = dense.row(r);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
            assert_eq!(row.sum(), 1.0);
        }
        assert_eq!(d.gram(), dense.transpose() * &dense);
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.2, 0.5), 0.0);
        for x in [-3.5, -1e-9, 0.0, 0.7, 12.0] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn penalty_examples() {
        let d = build_d(3).unwrap();
        let omega = DMatrix::identity(3, 3);
        let lam = Hyperparameters::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(penalty_value(&[0.0; 4], &[0.0; 3], &omega, &lam, &d).unwrap(), 3.0);
        assert_eq!(
            penalty_value(&[0.3], &[1.0, 2.0, 3.0], &omega, &Hyperparameters::zero(), &d).unwrap(),
            0.0
        );

        let d2 = build_d(2).unwrap();
        let lam = Hyperparameters::new(2.0, 1.0, 1.0).unwrap();
        let v = penalty_value(&[0.5], &[1.0, -1.0], &DMatrix::identity(2, 2), &lam, &d2).unwrap();
        assert_eq!(v, 7.0);
    }

    #[test]
    fn penalty_dimension_mismatch() {
        let d = build_d(3).unwrap();
        let lam = Hyperparameters::zero();
        assert!(penalty_value(&[], &[0.0; 2], &DMatrix::identity(3, 3), &lam, &d).is_err());
        assert!(penalty_value(&[], &[0.0; 3], &DMatrix::identity(2, 2), &lam, &d).is_err());
    }

    #[test]
    fn hyperparameters_reject_negative() {
        assert!(Hyperparameters::new(-1.0, 0.0, 0.0).is_err());
        assert!(Hyperparameters::new(0.0, f64::NAN, 0.0).is_err());
    }
}
