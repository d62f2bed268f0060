mod common;

use common::{gauss_hermite, gh_expect, normal, se, Moments};
use dgpsi::kernel::{build_correlation, expect_k, expect_kk, kernel_value, KernelFamily, KernelSpec};
use dgpsi::rng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

const SE: KernelFamily = KernelFamily::SquaredExponential;

#[test]
fn quadrature_rule_integrates_polynomials() {
    let gh = gauss_hermite(64);
    assert!((gh_expect(&gh, 0.0, 1.0, |_| 1.0) - 1.0).abs() < 1e-13);
    assert!((gh_expect(&gh, 0.3, 0.5, |x| x) - 0.3).abs() < 1e-13);
    assert!((gh_expect(&gh, 0.3, 0.5, |x| x * x) - 0.59).abs() < 1e-13);
    assert!((gh_expect(&gh, 0.0, 2.0, |x| x.powi(4)) - 12.0).abs() < 1e-11);
}

/// Largest closed-form vs quadrature gap over `cases` random draws with
/// `v <= max_ratio * l^2`.
fn worst_gap(nodes: usize, max_ratio: f64, cases: usize, seed: u64) -> f64 {
    let gh = gauss_hermite(nodes);
    let mut r = rng::stream(seed, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let l = r.random_range(0.3..3.0);
        let m = r.random_range(-2.0..2.0);
        let v = r.random_range(0.0..max_ratio) * l * l;
        let wi = r.random_range(-2.5..2.5);
        let wj = r.random_range(-2.5..2.5);
        let ek = expect_k(SE, l, m, v, wi).unwrap();
        let ekk = expect_kk(SE, l, m, v, wi, wj).unwrap();
        let qk = gh_expect(&gh, m, v, |x| se(l, x, wi));
        let qkk = gh_expect(&gh, m, v, |x| se(l, x, wi) * se(l, x, wj));
        worst = worst.max((ek - qk).abs()).max((ekk - qkk).abs());
    }
    worst
}

#[test]
fn closed_forms_match_quadrature() {
    // 64 nodes resolve the integrand while the input sd is not much wider
    // than the lengthscale
    let worst = worst_gap(64, 0.75, 100, 101);
    assert!(worst < 1e-10, "worst quadrature gap {worst:e}");
}

#[test]
fn closed_forms_match_fine_quadrature_for_wide_inputs() {
    let worst = worst_gap(200, 3.0, 100, 102);
    assert!(worst < 1e-10, "worst quadrature gap {worst:e}");
}

#[test]
fn expect_k_matches_monte_carlo() {
    let mut r = rng::stream(7, &[]);
    let (m, v, w) = (0.0, 0.5f64, 0.7);
    let mut mc = Moments::default();
    for _ in 0..1_000_000 {
        mc.push(se(1.0, m + v.sqrt() * normal(&mut r), w));
    }
    let exact = expect_k(SE, 1.0, m, v, w).unwrap();
    assert!((exact - mc.mean()).abs() < 3.0 * mc.std_error(), "{exact} vs {} ± {}", mc.mean(), mc.std_error());
}

#[test]
fn expect_kk_matches_monte_carlo() {
    let mut r = rng::stream(8, &[]);
    let (m, v, wi, wj) = (0.2, 0.3f64, -0.5, 1.0);
    let mut mc = Moments::default();
    for _ in 0..1_000_000 {
        let x = m + v.sqrt() * normal(&mut r);
        mc.push(se(1.0, x, wi) * se(1.0, x, wj));
    }
    let exact = expect_kk(SE, 1.0, m, v, wi, wj).unwrap();
    assert!((exact - mc.mean()).abs() < 3.0 * mc.std_error(), "{exact} vs {} ± {}", mc.mean(), mc.std_error());
}

#[test]
fn factor_reconstructs_random_correlations() {
    let mut r = rng::stream(9, &[]);
    for _ in 0..20 {
        let n = r.random_range(2..40);
        let d = r.random_range(1..4);
        let x = DMatrix::from_fn(n, d, |_, _| r.random_range(0.0..1.0));
        let ls: Vec<f64> = (0..d).map(|_| r.random_range(0.05..2.0)).collect();
        let spec = KernelSpec::new(SE, ls).unwrap();
        let c = build_correlation(&spec, r.random_range(0.0..0.1), &x).unwrap();
        let l = c.factor().l();
        let jittered = c.values() + DMatrix::identity(n, n) * c.jitter_applied();
        let err = (&l * l.transpose() - &jittered).norm() / jittered.norm();
        assert!(err < 1e-8, "relative reconstruction error {err:e}");
        assert!((c.values() - c.values().transpose()).amax() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_is_symmetric_bounded_and_one_only_at_zero(
        a in prop::collection::vec(-5.0f64..5.0, 2),
        b in prop::collection::vec(-5.0f64..5.0, 2),
        l in prop::collection::vec(0.05f64..5.0, 2),
        matern in any::<bool>(),
    ) {
        let family = if matern { KernelFamily::Matern52 } else { SE };
        let spec = KernelSpec::new(family, l).unwrap();
        let kab = kernel_value(&spec, &a, &b).unwrap();
        prop_assert_eq!(kab, kernel_value(&spec, &b, &a).unwrap());
        prop_assert!(kab >= 0.0 && kab <= 1.0);
        prop_assert_eq!(kernel_value(&spec, &a, &a).unwrap(), 1.0);
        if a != b {
            prop_assert!(kab < 1.0);
        }
    }

    #[test]
    fn expectations_are_bounded_and_jensen_holds(
        l in 0.05f64..5.0, m in -3.0f64..3.0, v in 0.0f64..4.0, wi in -3.0f64..3.0, wj in -3.0f64..3.0,
    ) {
        let ek = expect_k(SE, l, m, v, wi).unwrap();
        prop_assert!(ek > 0.0 && ek <= 1.0);
        let ekk = expect_kk(SE, l, m, v, wi, wj).unwrap();
        prop_assert!((ekk - expect_kk(SE, l, m, v, wj, wi).unwrap()).abs() <= 1e-15);
        let diag = expect_kk(SE, l, m, v, wi, wi).unwrap();
        prop_assert!(diag >= ek * ek * (1.0 - 1e-12));
    }

    #[test]
    fn peak_expectation_shrinks_with_variance(l in 0.05f64..5.0, m in -3.0f64..3.0, v in 0.0f64..4.0, dv in 1e-3f64..1.0) {
        let a = expect_k(SE, l, m, v, m).unwrap();
        let b = expect_k(SE, l, m, v + dv, m).unwrap();
        prop_assert!(b < a);
    }
}
