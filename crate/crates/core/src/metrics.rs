//! Scores against ground truth.
//!
//! In the zero-pattern scores a *positive* is an element shrunk to zero: `tp`
//! counts elements correctly estimated as zero, `tn` elements correctly
//! estimated as nonzero, `fp` elements wrongly shrunk to zero and `fn_` elements
//! wrongly left nonzero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassificationCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// `tp / (tp + fn)`, 1 when there are no true zeros.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `tn / (tn + fp)`, 1 when there are no true nonzeros.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroPatternScores {
    pub counts: ClassificationCounts,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// `(1/n) sum |g_hat - g|`.
pub fn mae_g(g_hat: &[f64], g_true: &[f64]) -> Result<f64> {
    check_lengths(g_hat.len(), g_true.len())?;
    if g_hat.is_empty() {
        return Ok(0.0);
    }
    Ok(g_hat.iter().zip(g_true).map(|(a, b)| (a - b).abs()).sum::<f64>() / g_hat.len() as f64)
}

/// `(1/p) sum (d_hat - d)^2`.
pub fn mse_delta(d_hat: &[f64], d_true: &[f64]) -> Result<f64> {
    check_lengths(d_hat.len(), d_true.len())?;
    if d_hat.is_empty() {
        return Ok(0.0);
    }
    Ok(d_hat.iter().zip(d_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d_hat.len() as f64)
}

/// An estimate counts as zero when `|est| <= tol`; the truth is compared exactly.
pub fn zero_pattern_scores(est: &[f64], truth: &[f64], tol: f64) -> Result<ZeroPatternScores> {
    check_lengths(est.len(), truth.len())?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be >= 0")));
    }
    let mut c = ClassificationCounts::default();
    for (e, t) in est.iter().zip(truth) {
        match (e.abs() <= tol, *t == 0.0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(ZeroPatternScores {
        counts: c,
        accuracy: c.accuracy(),
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
    })
}

/// Entries of `values` where `keep` is true.
pub fn select<T: Copy>(values: &[T], keep: &[bool]) -> Vec<T> {
    values.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae_g(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        assert!((mae_g(&[0.1, 0.3], &[0.2, 0.2]).unwrap() - 0.1).abs() < 1e-15);
        assert!(mae_g(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn mae_of_total_shrinkage() {
        // 30 of 100 adulterated, levels averaging 0.2
        let truth: Vec<f64> = (0..100)
            .map(|i| if i < 30 { [0.1, 0.2, 0.3][i % 3] } else { 0.0 })
            .collect();
        assert!((mae_g(&[0.0; 100], &truth).unwrap() - 0.06).abs() < 1e-15);
    }

    #[test]
    fn mse_examples() {
        let d = [0.5, -1.0, 2.0];
        assert_eq!(mse_delta(&d, &d).unwrap(), 0.0);
        let shifted: Vec<f64> = d.iter().map(|v| v + 1.0).collect();
        assert_eq!(mse_delta(&shifted, &d).unwrap(), 1.0);
        assert!(mse_delta(&d, &d[..2]).is_err());
    }

    #[test]
    fn zero_pattern_examples() {
        let s = zero_pattern_scores(&[0.0, 0.0, 1.0, 2.0], &[0.0, 0.0, 1.0, 2.0], 0.0).unwrap();
        assert_eq!((s.accuracy, s.sensitivity, s.specificity), (1.0, 1.0, 1.0));

        let s = zero_pattern_scores(&[0.0; 4], &[0.0, 0.0, 1.0, 2.0], 0.0).unwrap();
        assert_eq!(
            s.counts,
            ClassificationCounts {
                tp: 2,
                tn: 0,
                fp: 2,
                fn_: 0
            }
        );
        assert_eq!((s.accuracy, s.sensitivity, s.specificity), (0.5, 1.0, 0.0));
    }

    #[test]
    fn no_adulterated_sample_called_pure_means_full_specificity() {
        let s = zero_pattern_scores(&[0.1, 0.2, 0.05, 0.0], &[0.1, 0.2, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(s.counts.fp, 0);
        assert_eq!(s.specificity, 1.0);
        let s = zero_pattern_scores(&[0.0, 0.2], &[0.1, 0.2], 0.0).unwrap();
        assert!(s.counts.fp > 0 && s.specificity < 1.0);
    }

    #[test]
    fn empty_classes_score_one() {
        let s = zero_pattern_scores(&[0.0, 0.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(s.specificity, 1.0);
        let s = zero_pattern_scores(&[1.0], &[2.0], 0.0).unwrap();
        assert_eq!(s.sensitivity, 1.0);
    }

    #[test]
    fn tolerance_applies_to_estimates() {
        let s = zero_pattern_scores(&[1e-9, 0.5], &[0.0, 0.5], 1e-6).unwrap();
        assert_eq!(s.counts.tp, 1);
        assert!(zero_pattern_scores(&[0.0], &[0.0], -1.0).is_err());
    }
}
