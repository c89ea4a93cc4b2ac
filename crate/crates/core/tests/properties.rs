use drgrad_core::oracle::{self, fixtures, Estimator, Scenario, ToyProblem};
use drgrad_core::optim::GradientTable;
use drgrad_core::{ClassDist, ParamVector, Vec64};
use proptest::prelude::*;

const TOL: f64 = 1e-10;

fn centre() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2)
}

// Three classes with one to three examples each, a skewed q and a
// non-uniform target p.
fn problem() -> impl Strategy<Value = ToyProblem> {
    (
        prop::collection::vec(prop::collection::vec(centre(), 1..=3), 3),
        prop::collection::vec(0.05..1.0f64, 3),
        prop::collection::vec(0.05..1.0f64, 3),
    )
        .prop_map(|(classes, q, p)| {
            let rows = classes
                .into_iter()
                .enumerate()
                .flat_map(|(c, pts)| pts.into_iter().map(move |a| (Vec64::new(a), c)))
                .collect();
            let norm = |v: Vec<f64>| {
                let s: f64 = v.iter().sum();
                ClassDist::new(v.into_iter().map(|x| x / s).collect()).unwrap()
            };
            ToyProblem::quadratic(rows, 3, norm(q), norm(p)).unwrap()
        })
}

fn point(problem: &ToyProblem, v: &[f64]) -> ParamVector {
    fixtures::theta_for(problem, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outcome_probabilities_sum_to_one(pr in problem(), k in 1usize..=3) {
        let total: f64 = pr.outcomes(k).unwrap().iter().map(|o| o.prob).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubly_robust_unbiased_when_one_model_is_right(pr in problem(), th in centre(), seed in any::<u64>()) {
        let theta = point(&pr, &th);
        for scenario in [Scenario::WOkGBad, Scenario::WBadGOk] {
            let r = oracle::check_double_robustness(&pr, &theta, scenario, seed).unwrap();
            prop_assert!(r.bias_norm < TOL, "{} bias {}", scenario.name(), r.bias_norm);
        }
    }

    #[test]
    fn importance_weighted_sgd_is_unbiased(pr in problem(), th in centre()) {
        let theta = point(&pr, &th);
        let r = oracle::report(&pr, &theta, 1, &Estimator::IwSgd(pr.exact_weights().unwrap())).unwrap();
        prop_assert!(r.bias_norm < TOL);
    }

    #[test]
    fn svrg_and_saga_unbiased_under_uniform_draws(
        pr in problem(),
        th in centre(),
        snap in centre(),
        table in prop::collection::vec(centre(), 9),
        k in 1usize..=2,
    ) {
        // Uniform over examples: q proportional to class sizes, p likewise.
        let sizes: Vec<f64> = (0..3).map(|c| pr.dataset.class_indices(c).len() as f64).collect();
        let n: f64 = sizes.iter().sum();
        let dist = ClassDist::new(sizes.iter().map(|s| s / n).collect()).unwrap();
        let pr = ToyProblem::new(pr.model, pr.dataset.clone(), dist.clone(), dist).unwrap();
        let theta = point(&pr, &th);
        let rows: Vec<Vec64> = table.into_iter().take(pr.dataset.len()).map(Vec64::new).collect();
        let table = GradientTable::from_rows(&rows).unwrap();
        for est in [Estimator::Sgd, Estimator::Svrg(point(&pr, &snap)), Estimator::Saga(table)] {
            let r = oracle::report(&pr, &theta, k, &est).unwrap();
            prop_assert!(r.bias_norm < TOL, "{} bias {}", est.name(), r.bias_norm);
        }
    }

    #[test]
    fn svrg_at_its_snapshot_has_no_variance(pr in problem(), th in centre()) {
        let sizes: Vec<f64> = (0..3).map(|c| pr.dataset.class_indices(c).len() as f64).collect();
        let n: f64 = sizes.iter().sum();
        let dist = ClassDist::new(sizes.iter().map(|s| s / n).collect()).unwrap();
        let pr = ToyProblem::new(pr.model, pr.dataset.clone(), dist.clone(), dist).unwrap();
        let theta = point(&pr, &th);
        let cmp = oracle::compare_variance(&pr, &theta, 1, &Estimator::Svrg(theta.clone()), &Estimator::Sgd).unwrap();
        prop_assert!(cmp.a.exact_variance_trace < 1e-20);
        prop_assert!(cmp.difference <= 0.0);
    }

    #[test]
    fn momentum_matches_scaled_previous_delta(
        eta in 0.01..0.99f64,
        gamma in 0.0..0.99f64,
        th in centre(),
        seed in any::<u64>(),
    ) {
        let pr = fixtures::five_point();
        let theta = point(&pr, &th);
        let gap = oracle::momentum_trajectory_gap(&pr, &theta, eta, gamma, 100, seed).unwrap();
        prop_assert!(gap <= 1e-12, "gap {gap}");
    }
}

#[test]
fn both_bad_instance_is_biased() {
    let (pr, theta, seed) = fixtures::both_bad();
    let r = oracle::check_double_robustness(&pr, &theta, Scenario::BothBad, seed).unwrap();
    assert!(r.bias_norm > 1e-3, "bias {}", r.bias_norm);
}

#[test]
fn enumeration_cap_is_enforced() {
    let pr = fixtures::five_point();
    // 5^5 = 3125 fits, 5^6 = 15625 does not.
    assert!(pr.outcomes(5).is_ok());
    assert!(matches!(pr.outcomes(6), Err(drgrad_core::Error::Size { .. })));
}
