use std::sync::Arc;

use sbmc_core::limits::{self, generator_apply, sigma_t, LimitConfig, LimitError};
use sbmc_core::measures::FinitePointMeasure;
use sbmc_core::replaw::{ReproductionLaw, SolverConfig};
use sbmc_core::streams;
use sbmc_core::suite::{self, mixed_law, VerifyConfig};
use sbmc_core::tree::{self, TreeParams};

fn laws() -> Vec<ReproductionLaw> {
    vec![
        ReproductionLaw::DeterministicBinary,
        ReproductionLaw::UniformBinary,
        mixed_law(),
        ReproductionLaw::dirichlet(vec![1.0, 2.0, 3.0], Some(1.0)).unwrap(),
    ]
}

#[test]
fn sigma_weight_is_the_martingale() {
    for law in [ReproductionLaw::UniformBinary, mixed_law()] {
        let p0 = law.malthusian_exponent(&SolverConfig::default()).unwrap();
        let law = Arc::new(law);
        for seed in 0..20 {
            let tree = tree::grow_to_time(law.clone(), TreeParams::new(1.0, 1.0, seed), 4.0).unwrap();
            for t in [0.5, 2.0, 4.0] {
                let sigma = sigma_t(&tree.snapshot(t).unwrap(), t, 1.0, p0).unwrap();
                assert_eq!(sigma.total_weight, tree.intrinsic_martingale_time(p0, t).unwrap());
            }
        }
    }
}

#[test]
fn constant_test_functions_are_harmonic() {
    let mut rng = streams::stream(1);
    let ys = [
        FinitePointMeasure::new([1.0]).unwrap(),
        FinitePointMeasure::new([0.1, 0.7, 3.0]).unwrap(),
        FinitePointMeasure::empty(),
    ];
    for law in laws() {
        for y in &ys {
            let g = generator_apply(&law, 1.5, |_| 0.0, y, 100, &mut rng).unwrap();
            assert_eq!(g.mean, 0.0, "{}", law.name());
        }
    }
}

#[test]
fn reports_reproduce_bit_for_bit() {
    let cfg = LimitConfig {
        y_pool: 2000,
        step_pool: 10_000,
        ..LimitConfig::default()
    };
    let run = || {
        limits::mean_measure_test(&mixed_law(), 1.0, 5.0, |y| 1.0 / (1.0 + y), 500, 9, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = limits::mean_measure_test(&mixed_law(), 1.0, 5.0, |y| 1.0 / (1.0 + y), 500, 10, &cfg).unwrap();
    assert_ne!(a.values["tree_estimate"], c.values["tree_estimate"]);
}

#[test]
fn unit_test_function_is_normalized() {
    let cfg = LimitConfig {
        y_pool: 5000,
        ..LimitConfig::default()
    };
    for law in [ReproductionLaw::UniformBinary, mixed_law()] {
        let r = limits::mean_measure_test(&law, 1.0, 3.0, |_| 1.0, 4000, 2, &cfg).unwrap();
        assert!(r.passed(), "{r}");
    }
}

#[test]
fn verify_rejects_alpha_zero() {
    let r = suite::verify_law(&ReproductionLaw::UniformBinary, 0.0, &VerifyConfig::default(), 1);
    assert!(matches!(r, Err(LimitError::UnsupportedRegime(_))));
}

#[test]
fn acceptance_criteria_are_numbered_once() {
    let ids: Vec<u32> = suite::CRITERIA.iter().map(|c| c.0).collect();
    assert_eq!(ids, (1..=18).collect::<Vec<_>>());
    let r = suite::run_criterion(99, 0);
    assert!(!r.passed());
    assert!(r.error.is_some());
}
