mod common;

use common::instances::{desk_instance, Instance};
use pine_core::ensemble::support_size;
use pine_core::milp::SolveOptions;
use pine_core::pruner::{
    default_epsilon, effective_epsilon, solve_pruner, ConstraintPoint, PruneObjective,
};
use proptest::prelude::*;

fn points(seed: u64, take: usize) -> (pine_core::ensemble::Ensemble, Vec<ConstraintPoint>) {
    let Instance { e, fit, .. } = desk_instance(seed);
    let pts = fit
        .rows()
        .iter()
        .take(take)
        .map(|x| ConstraintPoint::from_point(&e, x))
        .collect();
    (e, pts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solutions_keep_every_constraint_point(seed in 0u64..1000, take in 1usize..40, l1 in any::<bool>()) {
        let (e, pts) = points(seed, take);
        let objective = if l1 { PruneObjective::L1 } else { PruneObjective::L0 };
        let eps = effective_epsilon(&e, &pts, objective, default_epsilon(&e)).unwrap();
        let sol = solve_pruner(&e, &pts, objective, eps, &SolveOptions::default()).unwrap();
        prop_assert!(sol.optimal);
        prop_assert!(sol.weights.iter().all(|w| *w >= 0.0));
        prop_assert_eq!(sol.support, support_size(&sol.weights));
        for p in &pts {
            prop_assert_eq!(e.class_from_leaves(&sol.weights, &p.leaves), p.class);
        }
        match objective {
            PruneObjective::L0 => {
                let total: f64 = sol.weights.iter().sum();
                prop_assert!((total - e.total_weight()).abs() < 1e-6 * e.total_weight());
            }
            // The original weights are feasible, so the optimum cannot exceed them.
            PruneObjective::L1 => prop_assert!(sol.objective_value <= e.total_weight() + 1e-6),
        }
    }

    #[test]
    fn more_points_never_shrink_the_support(seed in 0u64..1000, a in 1usize..40, b in 1usize..40) {
        let (small, large) = (a.min(b), a.max(b));
        let (e, pts) = points(seed, large);
        let eps = effective_epsilon(&e, &pts, PruneObjective::L0, default_epsilon(&e)).unwrap();
        let opts = SolveOptions::default();
        let s_small = solve_pruner(&e, &pts[..small], PruneObjective::L0, eps, &opts).unwrap();
        let s_large = solve_pruner(&e, &pts, PruneObjective::L0, eps, &opts).unwrap();
        prop_assert!(s_small.optimal && s_large.optimal);
        prop_assert!(s_small.support <= s_large.support);
    }
}

#[test]
fn no_points_keeps_one_tree() {
    let (e, _) = points(0, 0);
    let eps = default_epsilon(&e);
    let sol = solve_pruner(&e, &[], PruneObjective::L0, eps, &SolveOptions::default()).unwrap();
    assert!(sol.optimal);
    assert_eq!(sol.support, 1);
}
