//! Cross-module estimator checks that exercise the full pipeline at sizes
//! between the unit tests and the acceptance campaigns.

use rayon::prelude::*;

use simdist::harness::mix64;
use simdist::inference::{indirect_inference_estimate, EstimationConfig, KRule};
use simdist::model::{draw_sample, TruncatedExponential};

fn consistency_fraction(k_rule: KRule, reps: usize) -> f64 {
    let model = TruncatedExponential::new();
    let n = 2000usize;
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = draw_sample(&model, &[1.0], n, mix64(8888, n as u64, 2 * rep as u64));
            let cfg = EstimationConfig {
                k_rule,
                seed: mix64(8888, n as u64, 2 * rep as u64 + 1),
                ..EstimationConfig::default()
            };
            let res = indirect_inference_estimate(&data, &model, &cfg).unwrap();
            usize::from(res.a_n_held && (res.theta_hat[0] - 1.0).abs() <= 0.25)
        })
        .sum();
    hits as f64 / reps as f64
}

/// The estimator concentrates around the truth as n and k grow. At n = 2000
/// the asymptotic standard deviation of θ̂ is √(12.6/2000) ≈ 0.079, so a
/// 0.25 window is a ≈3σ event and 95% of seeded replications must land
/// inside it.
#[test]
fn estimator_consistent_under_s2() {
    let frac = consistency_fraction(KRule::S2, 100);
    assert!(
        frac >= 0.95,
        "only {:.0}% of replications within 0.25 of the truth",
        frac * 100.0
    );
}

/// Same check under the full quadratic simulation budget. Expensive on small
/// machines; run with `cargo test -- --ignored` when needed.
#[test]
#[ignore = "quadratic simulation budget at n = 2000; several minutes"]
fn estimator_consistent_under_s1() {
    let frac = consistency_fraction(KRule::S1 { m: 1.0 }, 100);
    assert!(
        frac >= 0.95,
        "only {:.0}% of replications within 0.25 of the truth",
        frac * 100.0
    );
}

/// Normality of √n(θ̂ - θ₀) at the sizes used by the published invariant
/// (M = 500 at n = 2000 under S1). The default suite asserts the same
/// statistics on the shared n = 1000 campaign in the acceptance tests.
#[test]
#[ignore = "full-size normality campaign; roughly an hour on two cores"]
fn normality_at_full_invariant_size() {
    use simdist::harness::{run_montecarlo, McConfig};
    let report = run_montecarlo(&McConfig {
        model: "trunc_exp".to_string(),
        theta0: vec![1.0],
        n_list: vec![2000],
        regime: KRule::S1 { m: 1.0 },
        reps: 500,
        master_seed: 161_803,
        estimation: EstimationConfig {
            compute_variance: true,
            ..EstimationConfig::default()
        },
        workers: None,
    })
    .unwrap();
    let s = report.summary_for(2000).unwrap();
    assert!(s.skewness[0].abs() <= 0.3, "skewness {}", s.skewness[0]);
    assert!(
        s.excess_kurtosis[0].abs() <= 0.6,
        "excess kurtosis {}",
        s.excess_kurtosis[0]
    );
    let coverage = s.coverage.as_ref().unwrap()[0];
    assert!((0.92..=0.98).contains(&coverage), "coverage {coverage}");
}
