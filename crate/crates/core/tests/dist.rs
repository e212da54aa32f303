use dynstruct::dist::{rank_utilities, FactorSpec, FactorizedBernoulli, StructureSample};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(v: &[u8]) -> StructureSample {
    StructureSample::from_u8(v).unwrap()
}

fn all_structures(n: usize) -> impl Iterator<Item = StructureSample> {
    (0u32..1 << n).map(move |code| StructureSample::new((0..n).map(|i| code >> i & 1 == 1).collect()))
}

fn mixed(theta: &[f64]) -> FactorizedBernoulli {
    FactorizedBernoulli::with_theta(
        vec![
            FactorSpec::independent(),
            FactorSpec::shared(3).unwrap(),
            FactorSpec::independent(),
            FactorSpec::shared(2).unwrap(),
            FactorSpec::independent(),
        ],
        theta.to_vec(),
    )
    .unwrap()
}

/// Vanilla score by central differences of the log-likelihood.
fn fd_score(d: &FactorizedBernoulli, m: &StructureSample, h: f64) -> Vec<f64> {
    (0..d.d_param())
        .map(|k| {
            let mut up = d.theta().to_vec();
            let mut dn = d.theta().to_vec();
            up[k] += h;
            dn[k] -= h;
            let lu = FactorizedBernoulli::with_theta(d.factors().to_vec(), up).unwrap().log_likelihood(m).unwrap();
            let ld = FactorizedBernoulli::with_theta(d.factors().to_vec(), dn).unwrap().log_likelihood(m).unwrap();
            (lu - ld) / (2.0 * h)
        })
        .collect()
}

#[test]
fn normalization_and_zero_mean_score_by_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let theta: Vec<f64> = (0..5).map(|_| rng.random_range(0.25..0.75)).collect();
        let d = mixed(&theta);
        assert_eq!(d.bit_len(), 8);
        let mut total = 0.0;
        let mut score = vec![0.0; d.d_param()];
        for m in all_structures(d.bit_len()) {
            let p = d.log_likelihood(&m).unwrap().exp();
            total += p;
            for (s, g) in score.iter_mut().zip(d.natural_grad_loglik(&m).unwrap()) {
                *s += p * g;
            }
        }
        assert!((total - 1.0).abs() < 1e-12, "total {total}");
        assert!(score.iter().all(|s| s.abs() < 1e-12), "{score:?}");
    }
}

#[test]
fn natural_gradient_equals_inverse_numeric_fisher_times_score() {
    // Full Fisher matrix E[s sᵀ] from finite-difference scores, inverted
    // with a general solver; independent of the closed forms.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let theta: Vec<f64> = (0..5).map(|_| rng.random_range(0.25..0.75)).collect();
        let d = mixed(&theta);
        let k = d.d_param();
        let all: Vec<StructureSample> = all_structures(d.bit_len()).collect();
        let scores: Vec<DVector<f64>> = all.iter().map(|m| DVector::from_vec(fd_score(&d, m, 1e-6))).collect();
        let mut fisher = DMatrix::<f64>::zeros(k, k);
        for (m, s) in all.iter().zip(&scores) {
            fisher += d.log_likelihood(m).unwrap().exp() * s * s.transpose();
        }
        let inv = fisher.clone().try_inverse().expect("Fisher is positive definite");
        for (m, s) in all.iter().zip(&scores) {
            let expected = &inv * s;
            let got = d.natural_grad_loglik(m).unwrap();
            for j in 0..k {
                assert!((expected[j] - got[j]).abs() < 1e-6, "{m:?} component {j}: {} vs {}", expected[j], got[j]);
            }
        }
        let diag = d.fisher_diagonal();
        for j in 0..k {
            assert!((fisher[(j, j)] - diag[j]).abs() < 1e-4 * diag[j]);
        }
    }
}

#[test]
fn numeric_fisher_at_theta_0_3() {
    let d = FactorizedBernoulli::independent(4, 0.3).unwrap();
    let mut fisher = [0.0; 4];
    for m in all_structures(4) {
        let p = d.log_likelihood(&m).unwrap().exp();
        for (f, s) in fisher.iter_mut().zip(fd_score(&d, &m, 1e-6)) {
            *f += p * s * s;
        }
    }
    for (f, g) in fisher.iter().zip(d.fisher_diagonal()) {
        assert!((f - g).abs() < 1e-4, "{f} vs {g}");
        assert!((g - 1.0 / 0.21).abs() < 1e-12);
    }
}

#[test]
fn closed_form_examples() {
    // One fair bit, padded with two more factors to satisfy d >= 3.
    let d = FactorizedBernoulli::independent(3, 0.5).unwrap();
    let ll = d.log_likelihood(&bits(&[1, 0, 0])).unwrap() - 2.0 * 0.5f64.ln();
    assert!((ll - 0.5f64.ln()).abs() < 1e-15);

    // Shared group of 2 at θ = 0.25 needs d >= 4 for 0.25 to be admissible.
    let factors = vec![
        FactorSpec::shared(2).unwrap(),
        FactorSpec::independent(),
        FactorSpec::independent(),
        FactorSpec::independent(),
    ];
    let d = FactorizedBernoulli::with_theta(factors, vec![0.25, 0.5, 0.5, 0.5]).unwrap();
    let ll = d.log_likelihood(&bits(&[1, 0, 1, 1, 1])).unwrap() - 3.0 * 0.5f64.ln();
    assert!((ll - (0.25f64 * 0.75).ln()).abs() < 1e-14);

    let factors = vec![
        FactorSpec::shared(4).unwrap(),
        FactorSpec::independent(),
        FactorSpec::independent(),
        FactorSpec::independent(),
    ];
    let d = FactorizedBernoulli::with_theta(factors, vec![0.25, 0.5, 0.5, 0.5]).unwrap();
    let g = d.natural_grad_loglik(&bits(&[1, 1, 1, 0, 1, 0, 1])).unwrap();
    assert_eq!(g, vec![0.5, 0.5, -0.5, 0.5]);
    assert_eq!(d.fisher_diagonal()[1], 4.0);
    let half = FactorizedBernoulli::with_theta(d.factors().to_vec(), vec![0.5; 4]).unwrap();
    assert_eq!(half.fisher_diagonal()[0], 16.0);
}

#[test]
fn rank_and_rate_examples() {
    assert_eq!(rank_utilities(&[0.1, 0.5, 0.2, 0.9]).unwrap().values(), &[1, 0, 0, -1]);
    assert_eq!(rank_utilities(&[0.3, 0.3]).unwrap().values(), &[1, -1]);
    let u8 = rank_utilities(&[8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0]).unwrap();
    assert_eq!(u8.values(), &[-1, 1, -1, 1, 0, 0, 0, 0]);

    let d31 = FactorizedBernoulli::independent(31, 0.5).unwrap();
    let u2 = rank_utilities(&[0.0, 1.0]).unwrap();
    assert_eq!(d31.theta_learning_rate(&u2).unwrap(), 1.0 / 62.0);
    let d4 = FactorizedBernoulli::independent(4, 0.5).unwrap();
    assert_eq!(d4.theta_learning_rate(&u8).unwrap(), 1.0 / 16.0);
}

#[test]
fn update_example_and_clamp_value() {
    let d = FactorizedBernoulli::independent(4, 0.5).unwrap();
    let samples = [bits(&[1, 1, 0, 0]), bits(&[0, 0, 0, 0])];
    let u = rank_utilities(&[0.0, 1.0]).unwrap();
    let next = d.update_theta(&samples, &u).unwrap();
    assert_eq!(next.theta(), &[0.5625, 0.5625, 0.5, 0.5]);
    assert_eq!(d.theta(), &[0.5; 4]);

    let near_top = FactorizedBernoulli::independent(31, 0.99).unwrap();
    assert_eq!(near_top.theta()[0], 1.0 - 1.0 / 31.0);
}

#[test]
fn sampling_frequencies() {
    let d = FactorizedBernoulli::independent(3, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let ones: usize = d.sample(&mut rng, n).unwrap().iter().filter(|m| m.get(0)).count();
    let frac = ones as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");

    let g = FactorizedBernoulli::with_theta(
        vec![FactorSpec::shared(3).unwrap(), FactorSpec::independent(), FactorSpec::independent()],
        vec![0.5; 3],
    )
    .unwrap();
    let mixed_groups = g
        .sample(&mut rng, 200)
        .unwrap()
        .iter()
        .filter(|m| {
            let b = &m.bits()[..3];
            b.iter().any(|&x| x) && b.iter().any(|&x| !x)
        })
        .count();
    assert!(mixed_groups > 0);
    assert!(d.sample(&mut rng, 1).is_err());
}

#[test]
fn deterministic_mode_examples() {
    let d = FactorizedBernoulli::with_theta(vec![FactorSpec::independent(); 3], vec![0.49, 0.5, 0.51]).unwrap();
    assert_eq!(d.deterministic_mode(), bits(&[0, 1, 1]));
    let g = FactorizedBernoulli::with_theta(
        vec![FactorSpec::shared(3).unwrap(), FactorSpec::independent(), FactorSpec::independent()],
        vec![0.4, 0.6, 0.6],
    )
    .unwrap();
    assert_eq!(g.deterministic_mode(), bits(&[0, 0, 0, 1, 1]));
    let low = FactorizedBernoulli::independent(5, 0.0001).unwrap();
    assert_eq!(low.deterministic_mode(), StructureSample::zeros(5));
}

#[test]
fn cga_limit_reaches_all_ones() {
    let mut converged = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = FactorizedBernoulli::independent(31, 0.5).unwrap();
        for _ in 0..5000 {
            let s = d.sample(&mut rng, 2).unwrap();
            let losses: Vec<f64> = s.iter().map(|m| -(m.count_ones() as f64)).collect();
            d = d.update_theta(&s, &rank_utilities(&losses).unwrap()).unwrap();
            if d.deterministic_mode() == StructureSample::ones(31) {
                converged += 1;
                break;
            }
        }
    }
    assert!(converged >= 9, "{converged}/10");
}

fn arb_layout() -> impl Strategy<Value = Vec<FactorSpec>> {
    prop::collection::vec(0usize..4, 3..8).prop_map(|sizes| {
        sizes
            .into_iter()
            .map(|s| if s == 0 { FactorSpec::independent() } else { FactorSpec::shared(s).unwrap() })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn utilities_sum_to_zero(losses in prop::collection::vec(-1e6f64..1e6, 2..40)) {
        let u = rank_utilities(&losses).unwrap();
        let q = losses.len().div_ceil(4);
        prop_assert_eq!(u.values().iter().map(|&v| i32::from(v)).sum::<i32>(), 0);
        prop_assert_eq!(u.values().iter().filter(|&&v| v == 1).count(), q);
        prop_assert_eq!(u.values().iter().filter(|&&v| v == -1).count(), q);
    }

    #[test]
    fn update_is_invariant_to_monotone_loss_maps(
        layout in arb_layout(),
        losses in prop::collection::vec(-5.0f64..5.0, 2..10),
        seed in any::<u64>(),
    ) {
        let d = FactorizedBernoulli::new(layout, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = d.sample(&mut rng, losses.len()).unwrap();
        let base = d.update_theta(&samples, &rank_utilities(&losses).unwrap()).unwrap();
        for f in [|x: f64| 10.0 * x + 3.0, |x: f64| x.powi(3), |x: f64| x.exp()] {
            let mapped: Vec<f64> = losses.iter().map(|&x| f(x)).collect();
            let other = d.update_theta(&samples, &rank_utilities(&mapped).unwrap()).unwrap();
            prop_assert_eq!(other.theta(), base.theta());
        }
    }

    #[test]
    fn identical_samples_leave_theta_unchanged(layout in arb_layout(), seed in any::<u64>()) {
        let d = FactorizedBernoulli::new(layout, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = d.sample_one(&mut rng);
        let next = d.update_theta(&[m.clone(), m], &rank_utilities(&[1.0, 2.0]).unwrap()).unwrap();
        prop_assert_eq!(next.theta(), d.theta());
    }
}

#[test]
fn clamp_fuzz_ten_thousand_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut d = mixed(&[0.5; 5]);
    let (lo, hi) = d.clamp_bounds();
    for i in 0..10_000 {
        if i % 500 == 0 {
            let theta: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            d = FactorizedBernoulli::with_theta(d.factors().to_vec(), theta).unwrap();
        }
        let lambda = rng.random_range(2..9);
        let s = d.sample(&mut rng, lambda).unwrap();
        let losses: Vec<f64> = (0..lambda).map(|_| rng.random_range(-1e9..1e9)).collect();
        d = d.update_theta(&s, &rank_utilities(&losses).unwrap()).unwrap();
        assert!(d.theta().iter().all(|&t| (lo..=hi).contains(&t)), "{:?}", d.theta());
    }
}
