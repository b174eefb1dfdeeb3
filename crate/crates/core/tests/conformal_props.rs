use pine_core::conformal::{calibrate, order_index, Threshold};
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..60)
}

proptest! {
    #[test]
    fn order_index_matches_integer_ceiling(n in 1usize..500, pct in 1u32..100) {
        // alpha = pct / 100, so (n + 1)(1 - alpha) = (n + 1)(100 - pct) / 100 exactly.
        let num = (n as u64 + 1) * (100 - pct) as u64;
        let expect = num.div_ceil(100).clamp(1, n as u64 + 1) as usize;
        prop_assert_eq!(order_index(n, pct as f64 / 100.0), expect);
    }

    #[test]
    fn threshold_shrinks_as_alpha_grows(s in scores(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t_lo = calibrate(&s, lo).unwrap().tau.value();
        let t_hi = calibrate(&s, hi).unwrap().tau.value();
        prop_assert!(t_hi <= t_lo);
    }

    #[test]
    fn admits_at_least_k_calibration_scores(s in scores(), alpha in 0.01f64..0.99) {
        let r = calibrate(&s, alpha).unwrap();
        let admitted = s.iter().filter(|v| r.tau.admits(**v)).count();
        if r.k <= r.n {
            prop_assert!(admitted >= r.k);
            prop_assert!((admitted as f64) >= (1.0 - alpha) * (r.n as f64 + 1.0) - 1.0 - 1e-9);
        } else {
            prop_assert_eq!(r.tau, Threshold::Unbounded);
            prop_assert_eq!(admitted, s.len());
        }
    }

    #[test]
    fn threshold_is_a_calibration_score(s in scores(), alpha in 0.01f64..0.99) {
        if let Threshold::Finite(t) = calibrate(&s, alpha).unwrap().tau {
            prop_assert!(s.contains(&t));
        }
    }
}

/// Exchangeable draws: the fraction of fresh points admitted averages at
/// least 1 - alpha over many calibrations.
#[test]
fn marginal_coverage_over_replications() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (n, reps, alpha) = (19, 4000, 0.2);
    let mut hits = 0usize;
    for _ in 0..reps {
        let cal: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let tau = calibrate(&cal, alpha).unwrap().tau;
        if tau.admits(rng.random::<f64>()) {
            hits += 1;
        }
    }
    // Exact coverage is k / (n + 1) = 16 / 20; allow four standard errors.
    let cov = hits as f64 / reps as f64;
    let se = (0.8f64 * 0.2 / reps as f64).sqrt();
    assert!((cov - 0.8).abs() < 4.0 * se, "coverage {cov}");
}

#[test]
fn rejects_bad_inputs() {
    assert!(calibrate(&[], 0.1).is_err());
    assert!(calibrate(&[1.0], 0.0).is_err());
    assert!(calibrate(&[1.0], 1.0).is_err());
    assert!(calibrate(&[f64::NAN], 0.5).is_err());
}
