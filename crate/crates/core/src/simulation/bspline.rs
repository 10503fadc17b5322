//! Clamped cubic B-splines on `[0, 1]` and the localized mean-shift built by
//! perturbing a run of spline coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;
pub const INTERNAL_KNOTS: usize = 15;

/// Shifts below this magnitude are snapped to exact zero.
const ZERO_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    /// Clamped basis on `[0, 1]` with equispaced internal knots.
    pub fn clamped_uniform(internal_knots: usize, degree: usize) -> Self {
        let mut knots = vec![0.0; degree + 1];
        let segments = internal_knots + 1;
        knots.extend((1..segments).map(|k| k as f64 / segments as f64));
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self { knots, degree }
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of every basis function at `x` (Cox-de Boor). The right end point
    /// belongs to the last knot span so the basis still sums to one there.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let t = &self.knots;
        let nb = self.len();
        let last = t.len() - 1;
        let x = x.clamp(t[0], t[last]);
        // degree-0 functions over all knot spans
        let mut b: Vec<f64> = (0..last)
            .map(|i| {
                let inside = t[i] <= x && x < t[i + 1];
                let right_end = x == t[last] && t[i] < t[i + 1] && t[i + 1] == t[last];
                if inside || right_end {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for k in 1..=self.degree {
            let next: Vec<f64> = (0..last - k)
                .map(|i| {
                    let mut v = 0.0;
                    let den_l = t[i + k] - t[i];
                    if den_l > 0.0 && b[i] != 0.0 {
                        v += (x - t[i]) / den_l * b[i];
                    }
                    let den_r = t[i + k + 1] - t[i + 1];
                    if den_r > 0.0 && b[i + 1] != 0.0 {
                        v += (t[i + k + 1] - x) / den_r * b[i + 1];
                    }
                    v
                })
                .collect();
            b = next;
        }
        debug_assert_eq!(b.len(), nb);
        b
    }

    /// `len() x xs.len()` basis values, row `k` holding basis function `k`.
    pub fn design(&self, xs: &[f64]) -> Vec<Vec<f64>> {
        let cols: Vec<Vec<f64>> = xs.iter().map(|&x| self.evaluate(x)).collect();
        (0..self.len())
            .map(|k| cols.iter().map(|c| c[k]).collect())
            .collect()
    }

    pub fn curve(&self, coefs: &[f64], xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| self.evaluate(x).iter().zip(coefs).map(|(b, c)| b * c).sum())
            .collect()
    }
}

/// `p` equispaced points on `[0, 1]`.
pub fn unit_grid(p: usize) -> Vec<f64> {
    if p == 1 {
        return vec![0.0];
    }
    (0..p).map(|j| j as f64 / (p - 1) as f64).collect()
}

/// Shift obtained by adding `shifts[k]` to coefficient `start + k`; exactly zero
/// outside the support of the perturbed basis functions.
pub fn perturbation(basis: &BSplineBasis, xs: &[f64], start: usize, shifts: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let b = basis.evaluate(x);
            let v: f64 = shifts.iter().enumerate().map(|(k, s)| s * b[start + k]).sum();
            if v.abs() < ZERO_SNAP {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Pure-food mean curve and a localized mean shift.
///
/// The mean is a random cubic spline (coefficients uniform on `[-1, 1]`); the
/// shift perturbs a contiguous run of coefficients by uniform amounts in
/// `[0.5, 1.5]`, the run chosen so its support covers about
/// `support_fraction * p` grid points.
pub fn bspline_delta(p: usize, support_fraction: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(support_fraction > 0.0 && support_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "support fraction {support_fraction} must lie in (0, 1)"
        )));
    }
    if p < 2 {
        return Err(Error::InvalidArgument("need p >= 2 grid points".into()));
    }
    let basis = BSplineBasis::clamped_uniform(INTERNAL_KNOTS, DEGREE);
    let xs = unit_grid(p);
    let design = basis.design(&xs);
    let nb = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefs: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mu = basis.curve(&coefs, &xs);

    let target = support_fraction * p as f64;
    let mut runs = Vec::new();
    for start in 0..nb {
        let mut covered = vec![false; p];
        for len in 1..=(nb - start) {
            for (j, c) in covered.iter_mut().enumerate() {
                *c |= design[start + len - 1][j] > 0.0;
            }
            let count = covered.iter().filter(|&&c| c).count();
            runs.push((start, len, count));
        }
    }
    let slack = (0.1 * target).max(1.0);
    let best_gap = runs
        .iter()
        .map(|&(_, _, c)| (c as f64 - target).abs())
        .fold(f64::INFINITY, f64::min);
    if best_gap > 0.5 * target {
        return Err(Error::InvalidArgument(format!(
            "support fraction {support_fraction} is too small for p = {p}: no coefficient run qualifies"
        )));
    }
    let pool: Vec<(usize, usize)> = runs
        .iter()
        .filter(|&&(_, _, c)| (c as f64 - target).abs() <= best_gap.max(slack))
        .map(|&(s, l, _)| (s, l))
        .collect();
    let (start, len) = pool[rng.random_range(0..pool.len())];
    let shifts: Vec<f64> = (0..len).map(|_| rng.random_range(0.5..=1.5)).collect();
    let delta = perturbation(&basis, &xs, start, &shifts);
    Ok((delta, mu))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_size() {
        let b = BSplineBasis::clamped_uniform(INTERNAL_KNOTS, DEGREE);
        assert_eq!(b.len(), INTERNAL_KNOTS + DEGREE + 1);
    }

    #[test]
    fn partition_of_unity() {
        let b = BSplineBasis::clamped_uniform(INTERNAL_KNOTS, DEGREE);
        for x in unit_grid(257) {
            let s: f64 = b.evaluate(x).iter().sum();
            assert!((s - 1.0).abs() <= 1e-10, "x = {x}: {s}");
        }
    }

    #[test]
    fn uniform_shift_of_all_coefficients_is_constant() {
        let b = BSplineBasis::clamped_uniform(INTERNAL_KNOTS, DEGREE);
        let xs = unit_grid(50);
        let d = perturbation(&b, &xs, 0, &vec![0.7; b.len()]);
        assert!(d.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let zero = perturbation(&b, &xs, 3, &[0.0, 0.0]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn support_fraction_bounds() {
        assert!(bspline_delta(100, 0.0, 1).is_err());
        assert!(bspline_delta(100, 1.0, 1).is_err());
        assert!(bspline_delta(100, 0.005, 1).is_err());
    }

    #[test]
    fn realized_support_tracks_target() {
        for seed in 0..20 {
            let (delta, mu) = bspline_delta(100, 0.254, seed).unwrap();
            assert_eq!(mu.len(), 100);
            let frac = delta.iter().filter(|&&v| v != 0.0).count() as f64 / 100.0;
            assert!((0.20..=0.31).contains(&frac), "seed {seed}: {frac}");
        }
    }
}
