use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sparsepmm::data::{self, CenteredDataset, SpectraDataset};
use sparsepmm::membership::update_g;
use sparsepmm::metrics::zero_pattern_scores;
use sparsepmm::penalty::penalty_value;
use sparsepmm::simulation::mexican_hat_delta;
use sparsepmm::{build_d, soft_threshold, Hyperparameters, MembershipVector};

fn matrix(n: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * p).prop_map(move |v| DMatrix::from_vec(n, p, v))
}

/// Random membership problem: data, shift, SPD precision and labels.
fn membership_case() -> impl Strategy<Value = (CenteredDataset, Vec<f64>, DMatrix<f64>, MembershipVector)> {
    (1usize..12, 1usize..6).prop_flat_map(|(n, p)| {
        (
            matrix(n, p),
            prop::collection::vec(-2.0..2.0f64, p),
            matrix(p, p),
            prop::collection::vec(prop::option::weighted(0.3, 0.0..=0.5f64), n),
            prop::collection::vec(0.0..=0.5f64, n),
        )
            .prop_filter("nonzero shift", |(_, d, _, _, _)| d.iter().any(|v| v.abs() > 1e-3))
            .prop_map(|(y, delta, a, labels, start)| {
                let p = delta.len();
                let omega = &a * a.transpose() + DMatrix::identity(p, p);
                let fixed: Vec<bool> = labels.iter().map(Option::is_some).collect();
                let g: Vec<f64> = labels.iter().zip(&start).map(|(l, s)| l.unwrap_or(*s)).collect();
                let yc = CenteredDataset::new(y, labels).unwrap();
                (yc, delta, omega, MembershipVector::new(g, fixed).unwrap())
            })
    })
}

proptest! {
    #[test]
    fn soft_threshold_is_odd(x in -100.0..100.0f64, lam in 0.0..10.0f64) {
        prop_assert_eq!(soft_threshold(-x, lam), -soft_threshold(x, lam));
    }

    #[test]
    fn soft_threshold_is_nonexpansive(x in -100.0..100.0f64, y in -100.0..100.0f64, lam in 0.0..10.0f64) {
        prop_assert!((soft_threshold(x, lam) - soft_threshold(y, lam)).abs() <= (x - y).abs() + 1e-12);
    }

    #[test]
    fn soft_threshold_zero_iff_inside_band(x in -10.0..10.0f64, lam in 0.0..10.0f64) {
        prop_assert_eq!(soft_threshold(x, lam) == 0.0, x.abs() <= lam);
    }

    #[test]
    fn penalty_is_homogeneous_in_lambda(
        g in prop::collection::vec(0.0..0.5f64, 5),
        delta in prop::collection::vec(-2.0..2.0f64, 4),
        a in matrix(4, 4),
        lam in (0.0..3.0f64, 0.0..3.0f64, 0.0..3.0f64),
        c in 0.0..5.0f64,
    ) {
        let d = build_d(4).unwrap();
        let l = Hyperparameters::new(lam.0, lam.1, lam.2).unwrap();
        let lc = Hyperparameters::new(c * lam.0, c * lam.1, c * lam.2).unwrap();
        let base = penalty_value(&g, &delta, &a, &l, &d).unwrap();
        let scaled = penalty_value(&g, &delta, &a, &lc, &d).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-10 * (1.0 + scaled.abs()));
    }

    #[test]
    fn operator_matches_dense_matrix(x in prop::collection::vec(-5.0..5.0f64, 2..30)) {
        let p = x.len();
        let d = build_d(p).unwrap();
        let dense = d.to_dense();
        prop_assert_eq!(dense.shape(), (2 * p - 1, p));
        let xv = DVector::from_column_slice(&x);
        let want = &dense * &xv;
        prop_assert!((DVector::from_vec(d.apply(&x)) - &want).amax() <= 1e-12);
        let z: Vec<f64> = (0..2 * p - 1).map(|k| (k as f64 * 0.7).sin()).collect();
        let want_t = dense.transpose() * DVector::from_column_slice(&z);
        prop_assert!((DVector::from_vec(d.apply_transpose(&z)) - want_t).amax() <= 1e-12);
        prop_assert!((d.gram() - dense.transpose() * &dense).amax() <= 1e-12);
    }

    #[test]
    fn accuracy_symmetric_under_swap(
        pairs in prop::collection::vec((prop::option::of(0.1..1.0f64), prop::option::of(0.1..1.0f64)), 1..40)
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0.unwrap_or(0.0)).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1.unwrap_or(0.0)).collect();
        let ab = zero_pattern_scores(&a, &b, 0.0).unwrap();
        let ba = zero_pattern_scores(&b, &a, 0.0).unwrap();
        prop_assert_eq!(ab.counts.fp, ba.counts.fn_);
        prop_assert_eq!(ab.counts.fn_, ba.counts.fp);
        prop_assert_eq!(ab.accuracy, ba.accuracy);
        prop_assert_eq!(ab.counts.total(), a.len());
        let c = ab.counts;
        prop_assert_eq!(ab.accuracy, (c.tp + c.tn) as f64 / c.total() as f64);
    }

    #[test]
    fn centering_round_trips(y in matrix(6, 4), mu in prop::collection::vec(-1.0..1.0f64, 4)) {
        let mu = DVector::from_vec(mu);
        let ds = SpectraDataset::from_matrix(y.clone(), vec![None; 6]).unwrap().with_mu_pure(mu.clone()).unwrap();
        let yc = data::center(&ds).unwrap();
        for i in 0..6 {
            for j in 0..4 {
                prop_assert!((yc.yc()[(i, j)] + mu[j] - y[(i, j)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_by_one_is_identity(y in matrix(5, 7)) {
        let ds = SpectraDataset::from_matrix(y, vec![None; 5]).unwrap();
        prop_assert_eq!(data::aggregate_adjacent(&ds, 1).unwrap(), ds.clone());
        let agg = data::aggregate_adjacent(&ds, 2).unwrap();
        prop_assert_eq!(agg.p(), 4);
        prop_assert!((agg.absorbance()[(0, 3)] - ds.absorbance()[(0, 6)]).abs() <= 1e-15);
    }

    #[test]
    fn mexican_hat_stays_in_range(p in 2usize..400, scale in 0.1..3.0f64) {
        for v in mexican_hat_delta(p, scale) {
            prop_assert!(v >= -1.6 * scale && v <= 2.4 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn memberships_stay_in_range((yc, delta, omega, cur) in membership_case(), lam in 0.0..5.0f64) {
        let out = update_g(&yc, &delta, &omega, lam, &cur, 0.5).unwrap();
        prop_assert!(out.values().iter().all(|g| (0.0..=0.5).contains(g)));
    }

    #[test]
    fn raising_lambda_g_never_raises_memberships(
        (yc, delta, omega, cur) in membership_case(),
        lam in 0.0..3.0f64,
        extra in 0.0..3.0f64,
    ) {
        let lo = update_g(&yc, &delta, &omega, lam, &cur, 0.5).unwrap();
        let hi = update_g(&yc, &delta, &omega, lam + extra, &cur, 0.5).unwrap();
        for (i, fixed) in cur.fixed_mask().iter().enumerate() {
            if !fixed {
                prop_assert!(hi.values()[i] <= lo.values()[i]);
            }
        }
    }

    #[test]
    fn labeled_memberships_are_untouched((yc, delta, omega, cur) in membership_case(), lam in 0.0..5.0f64) {
        let out = update_g(&yc, &delta, &omega, lam, &cur, 0.5).unwrap();
        for (i, fixed) in cur.fixed_mask().iter().enumerate() {
            if *fixed {
                prop_assert_eq!(out.values()[i].to_bits(), cur.values()[i].to_bits());
            }
        }
        prop_assert_eq!(out.fixed_mask(), cur.fixed_mask());
    }

    #[test]
    fn unclipped_memberships_minimize_sample_objective((yc, delta, omega, cur) in membership_case()) {
        let out = update_g(&yc, &delta, &omega, 0.0, &cur, 0.5).unwrap();
        let dv = DVector::from_column_slice(&delta);
        let q = dv.dot(&(&omega * &dv));
        for i in 0..yc.n() {
            if cur.fixed_mask()[i] {
                continue;
            }
            let y = yc.yc().row(i).transpose();
            let loss = |g: f64| {
                let r = &y - &dv * g;
                r.dot(&(&omega * &r))
            };
            let best = (0..=5000).map(|k| k as f64 * 1e-4).min_by(|a, b| loss(*a).total_cmp(&loss(*b))).unwrap();
            prop_assert!((out.values()[i] - best).abs() <= 1e-4 + 1e-9 / q);
        }
    }
}
