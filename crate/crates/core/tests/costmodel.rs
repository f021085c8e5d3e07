use std::convert::Infallible;

use filedag_core::costmodel::{closed_form, empirical_growth, monte_carlo, polyfit, text_lineage, CostParams, ParamError, SizeDist};
use filedag_core::increment::FULL_FILE_OVERHEAD;
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ok(vs: Vec<Vec<u8>>) -> impl Iterator<Item = Result<Vec<u8>, Infallible>> {
    vs.into_iter().map(Ok)
}

fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut b = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut b);
    b
}

#[test]
fn closed_form_example() {
    let r = closed_form(&CostParams::new(10, 0.1, 100.0, 1.0)).unwrap();
    assert!((r.c - 550.0).abs() < 1e-9);
    assert!((r.c_prime - 109.0).abs() < 1e-9);
    assert!((r.ratio - 109.0 / 550.0).abs() < 1e-12);
    assert_eq!(r.sizes.len(), 11);
    assert_eq!(r.sizes[0], 0.0);
    assert!((r.sizes[10] - 100.0).abs() < 1e-9);
    assert!(r.increments.iter().all(|&i| (i - 10.9).abs() < 1e-9));
    assert!((r.sizes.iter().sum::<f64>() - r.c).abs() < 1e-9);
    assert!((r.increments.iter().sum::<f64>() - r.c_prime).abs() < 1e-9);
}

#[test]
fn single_version_costs_the_file() {
    for rev in [0.0, 3.0, 50.0] {
        let r = closed_form(&CostParams::new(1, 1.0, 777.0, rev)).unwrap();
        assert_eq!(r.c, 777.0);
        assert_eq!(r.c_prime, 777.0);
    }
}

#[test]
fn doubling_n_halves_the_ratio() {
    for n in [10u64, 100, 1000] {
        let a = closed_form(&CostParams::new(n, 0.1, 100.0, 1.0)).unwrap().ratio;
        let b = closed_form(&CostParams::new(2 * n, 0.1, 100.0, 1.0)).unwrap().ratio;
        // Exactly (n+1)/(2n+1) of the original, which is within 1% of 1/2 once n >= 50.
        let expect = (n as f64 + 1.0) / (2.0 * n as f64 + 1.0);
        assert!((b / a - expect).abs() < 1e-12);
        if n >= 100 {
            assert!((b / a - 0.5).abs() / 0.5 < 0.01, "n={n}: {}", b / a);
        }
    }
}

#[test]
fn monte_carlo_matches_closed_form() {
    let p = CostParams::new(10, 0.1, 100.0, 1.0).with_seed(11);
    let mc = monte_carlo(&p, 100_000).unwrap();
    let cf = closed_form(&p).unwrap();
    assert!((mc.c - cf.c).abs() / cf.c < 0.02, "{} vs {}", mc.c, cf.c);
    assert!((mc.c_prime - cf.c_prime).abs() / cf.c_prime < 0.02, "{} vs {}", mc.c_prime, cf.c_prime);
    assert_eq!(mc, monte_carlo(&p, 100_000).unwrap());
}

#[test]
fn monte_carlo_within_three_sigma_on_grid() {
    for (i, &(n, p, a, r)) in
        [(5, 0.5, 10.0, 1.0), (10, 0.1, 100.0, 1.0), (40, 0.3, 50.0, 5.0), (100, 0.9, 20.0, 0.0), (25, 1.0, 8.0, 2.0)].iter().enumerate()
    {
        let params = CostParams::new(n, p, a, r).with_seed(i as u64);
        let mc = monte_carlo(&params, 20_000).unwrap();
        let cf = closed_form(&params).unwrap();
        assert!((mc.c - cf.c).abs() <= 3.0 * mc.c_stderr, "C n={n}: {} vs {} (se {})", mc.c, cf.c, mc.c_stderr);
        assert!(
            (mc.c_prime - cf.c_prime).abs() <= 3.0 * mc.c_prime_stderr,
            "C' n={n}: {} vs {} (se {})",
            mc.c_prime,
            cf.c_prime,
            mc.c_prime_stderr
        );
    }
}

#[test]
fn constant_sizes_with_p_one_are_exact() {
    let p = CostParams::new(30, 1.0, 64.0, 9.0).with_dist(SizeDist::Constant);
    let mc = monte_carlo(&p, 5).unwrap();
    let cf = closed_form(&p).unwrap();
    assert_eq!(mc.c, cf.c);
    assert_eq!(mc.c_prime, cf.c_prime);
    assert_eq!(mc.sizes, cf.sizes);
    assert_eq!(mc.c_stderr, 0.0);
}

#[test]
fn pure_additions_give_two_over_n_plus_one() {
    for n in [1u64, 2, 10, 99] {
        let r = closed_form(&CostParams::new(n, 1.0, 40.0, 0.0)).unwrap();
        assert!((r.c_prime - n as f64 * 40.0).abs() < 1e-9);
        assert!((r.ratio - 2.0 / (n as f64 + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn ratio_times_n_stays_in_band() {
    let base = CostParams::new(10, 0.1, 100.0, 1.0);
    let w = base.rev_weight();
    for n in [10u64, 100, 1000] {
        let params = CostParams { n, ..base };
        let cf = closed_form(&params).unwrap().ratio * n as f64;
        assert!((1.0..=2.0 * (1.0 + w)).contains(&cf), "n={n}: {cf}");
        let mc = monte_carlo(&params.with_seed(n), 2_000).unwrap().ratio * n as f64;
        assert!((1.0..=2.0 * (1.0 + w)).contains(&mc), "n={n}: {mc}");
    }
}

#[test]
fn invalid_params_are_rejected() {
    assert_eq!(closed_form(&CostParams::new(5, 0.0, 1.0, 1.0)), Err(ParamError::P(0.0)));
    assert_eq!(closed_form(&CostParams::new(5, 1.5, 1.0, 1.0)), Err(ParamError::P(1.5)));
    assert_eq!(closed_form(&CostParams::new(5, 0.5, 0.0, 1.0)), Err(ParamError::MeanAdd(0.0)));
    assert_eq!(monte_carlo(&CostParams::new(5, 0.5, 1.0, -1.0), 1), Err(ParamError::MeanRev(-1.0)));
    assert_eq!(closed_form(&CostParams::new(0, 0.5, 1.0, 1.0)), Err(ParamError::N));
    assert!(matches!(closed_form(&CostParams::new(5, 0.001, 1.0, 1.0)), Err(ParamError::RevWeight(_))));
}

#[test]
fn polyfit_recovers_known_curves() {
    let x: Vec<f64> = (1..=50).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v + 0.5 * v * v).collect();
    let q = polyfit(&x, &y, 2);
    assert!((q.coef[0] - 3.0).abs() < 1e-6 && (q.coef[1] - 2.0).abs() < 1e-6 && (q.coef[2] - 0.5).abs() < 1e-8);
    assert!((q.r2 - 1.0).abs() < 1e-12);
    let l = polyfit(&x, &y, 1);
    assert!(l.r2 < 0.99);
}

#[test]
fn text_growth_is_quadratic_versus_linear() {
    let g = empirical_growth(ok(text_lineage(1, 1000, 100)), 100).unwrap();
    assert_eq!(g.full.len(), 100);
    let x: Vec<f64> = (1..=100).map(f64::from).collect();
    let full: Vec<f64> = g.full.iter().map(|&b| b as f64).collect();
    let inc: Vec<f64> = g.increment.iter().map(|&b| b as f64).collect();
    assert!(polyfit(&x, &full, 2).r2 > 0.99);
    assert!(polyfit(&x, &inc, 1).r2 > 0.95);
    assert!((inc[99] / full[99]) < 0.1);
}

#[test]
fn identical_versions_add_nothing_after_the_first_increment() {
    let v = b"same content\n".repeat(50);
    let g = empirical_growth(ok(vec![v.clone(); 20]), 20).unwrap();
    assert_eq!(g.increment[0], v.len() as u64);
    assert!(g.increment[1] > g.increment[0]);
    assert!(g.increment[2..].iter().all(|&b| b == g.increment[1]));
    assert_eq!(g.full[19], 20 * v.len() as u64);
}

#[test]
fn random_binaries_cost_full_size_plus_overhead() {
    let vs: Vec<Vec<u8>> = (0..10).map(|s| random_bytes(4096, s)).collect();
    let g = empirical_growth(ok(vs), 10).unwrap();
    for (t, (&f, &i)) in g.full.iter().zip(&g.increment).enumerate() {
        assert_eq!(i, f + t as u64 * FULL_FILE_OVERHEAD as u64);
    }
}

#[derive(Debug, thiserror::Error)]
#[error("generator broke")]
struct Broke;

#[test]
fn generator_failure_propagates() {
    let vs = vec![Ok(b"a".to_vec()), Err(Broke)];
    assert!(empirical_growth(vs, 5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn increment_store_bounded_by_full_plus_overhead(
        versions in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..300), 1..12)
    ) {
        let n = versions.len();
        let g = empirical_growth(ok(versions), n).unwrap();
        for (t, (&f, &i)) in g.full.iter().zip(&g.increment).enumerate() {
            prop_assert!(i <= f + t as u64 * FULL_FILE_OVERHEAD as u64);
        }
    }

    #[test]
    fn closed_form_gap_matches_algebra(n in 1u64..2000, p in 0.05f64..=1.0, a in 1.0f64..1e4, r_frac in 0.0f64..1.0) {
        let params = CostParams::new(n, p, a, a * r_frac);
        prop_assume!(params.validate().is_ok());
        let cf = closed_form(&params).unwrap();
        // C - C' = n((n-1)/2 p E(a) - (1-p) E(r)).
        let margin = (n as f64 - 1.0) / 2.0 * p * a - (1.0 - p) * a * r_frac;
        prop_assert!(((cf.c - cf.c_prime) - n as f64 * margin).abs() <= 1e-9 * cf.c.max(1.0));
        prop_assert_eq!(cf.sizes[0], 0.0);
    }
}
