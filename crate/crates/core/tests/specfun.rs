//! Special-function checks against exact rational and closed-form oracles.

use magres::specfun::{
    laguerre, laguerre_derivative, laguerre_unchecked, ln_gamma, reg_lower_gamma, reg_upper_gamma, SpecfunError,
    LAGUERRE_MAX_DEGREE,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;

/// Exact `L_q(t) = sum_k C(q,k) (-t)^k / k!` in rational arithmetic, with `t`
/// converted from its binary64 value without rounding.
fn laguerre_exact(q: usize, t: f64) -> f64 {
    let t = BigRational::from_float(t).expect("finite argument");
    let mut sum = BigRational::zero();
    let mut binom = BigInt::one();
    let mut fact = BigInt::one();
    let mut pow = BigRational::one();
    for k in 0..=q {
        if k > 0 {
            binom = binom * BigInt::from(q + 1 - k) / BigInt::from(k);
            fact *= BigInt::from(k);
            pow = -pow * &t;
        }
        sum += &pow * BigRational::from_integer(binom.clone()) / BigRational::from_integer(fact.clone());
    }
    sum.to_f64().expect("representable")
}

/// Sum of the absolute values of the expansion terms, i.e. `L_q(-t)`; the
/// natural magnitude scale of the polynomial at `t`.
fn laguerre_term_scale(q: usize, t: f64) -> f64 {
    laguerre_unchecked(q, 0.0, -t)
}

#[test]
fn laguerre_matches_exact_rational_expansion() {
    let mut worst = 0.0f64;
    for q in 0..=50 {
        for i in 0..=100 {
            let t = 0.5 * i as f64;
            let exact = laguerre_exact(q, t);
            let got = laguerre(q, t).unwrap();
            let rel = (got - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-10, "worst relative error {worst:e}");
}

#[test]
fn laguerre_low_degrees_closed_form() {
    for &t in &[0.0, 0.3, 1.0, 4.5, 17.0] {
        assert_eq!(laguerre(0, t).unwrap(), 1.0);
        assert!((laguerre(1, t).unwrap() - (1.0 - t)).abs() < 1e-15);
        let l2 = 0.5 * (t * t - 4.0 * t + 2.0);
        assert!((laguerre(2, t).unwrap() - l2).abs() < 1e-13 * (1.0 + l2.abs()));
    }
    // L_q(0) = 1 for every degree.
    for q in [5, 50, 200] {
        assert!((laguerre(q, 0.0).unwrap() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn laguerre_rejects_out_of_range_arguments() {
    assert!(matches!(laguerre(LAGUERRE_MAX_DEGREE + 1, 1.0), Err(SpecfunError::Domain { .. })));
    assert!(matches!(laguerre(3, -0.1), Err(SpecfunError::Domain { .. })));
    assert!(matches!(laguerre(3, f64::NAN), Err(SpecfunError::Domain { .. })));
    assert!(laguerre(LAGUERRE_MAX_DEGREE, 10.0).is_ok());
}

#[test]
fn laguerre_derivative_matches_finite_difference() {
    for &(n, alpha, t) in &[(3usize, 0.0, 1.2), (7, 1.0, 2.5), (12, 2.0, 6.0)] {
        let h = 1e-5;
        let fd = (laguerre_unchecked(n, alpha, t + h) - laguerre_unchecked(n, alpha, t - h)) / (2.0 * h);
        let an = laguerre_derivative(n, alpha, t);
        assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "n={n}: fd {fd} vs {an}");
    }
    assert_eq!(laguerre_derivative(0, 0.0, 3.0), 0.0);
}

#[test]
fn incomplete_gamma_reference_values() {
    let p = reg_lower_gamma(1.0, 1.0).unwrap();
    assert!((p - (1.0 - (-1.0f64).exp())).abs() <= 1e-12);
    // P(1/2, x) = erf(sqrt x); erf(1) to 16 digits.
    let erf1 = 0.842_700_792_949_714_9;
    assert!((reg_lower_gamma(0.5, 1.0).unwrap() - erf1).abs() < 1e-13);
    assert_eq!(reg_lower_gamma(3.0, 0.0).unwrap(), 0.0);
    assert!((reg_upper_gamma(3.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn incomplete_gamma_integer_order_matches_poisson_sum() {
    // P(n, x) = 1 - e^{-x} sum_{j<n} x^j / j!; the upper tail Q is the sum itself.
    for n in 1..=30usize {
        for &x in &[0.1, 1.0, 3.7, 12.0, 40.0] {
            let mut term = 1.0;
            let mut sum = 1.0;
            for j in 1..n {
                term *= x / j as f64;
                sum += term;
            }
            let q_exact = (-x as f64).exp() * sum;
            let q = reg_upper_gamma(n as f64, x).unwrap();
            assert!((q - q_exact).abs() <= 1e-12 * q_exact.max(1e-300) + 1e-300, "Q({n},{x}) = {q} vs {q_exact}");
        }
    }
}

#[test]
fn incomplete_gamma_rejects_bad_order() {
    assert!(reg_lower_gamma(0.0, 1.0).is_err());
    assert!(reg_lower_gamma(-1.0, 1.0).is_err());
    assert!(reg_lower_gamma(1.0, -1.0).is_err());
}

#[test]
fn ln_gamma_matches_factorials() {
    let mut ln_fact = 0.0f64;
    for n in 1..=60usize {
        if n > 1 {
            ln_fact += ((n - 1) as f64).ln();
        }
        assert!((ln_gamma(n as f64) - ln_fact).abs() < 1e-13 * (1.0 + ln_fact), "n={n}");
    }
    let half = 0.5 * std::f64::consts::PI.ln();
    assert!((ln_gamma(0.5) - half).abs() < 1e-14);
}

proptest! {
    #[test]
    fn incomplete_gamma_halves_sum_to_one(a in 0.05f64..60.0, x in 0.0f64..120.0) {
        let p = reg_lower_gamma(a, x).unwrap();
        let q = reg_upper_gamma(a, x).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_gamma_is_monotone_in_x(a in 0.1f64..40.0, x in 0.0f64..60.0, dx in 1e-3f64..5.0) {
        let p0 = reg_lower_gamma(a, x).unwrap();
        let p1 = reg_lower_gamma(a, x + dx).unwrap();
        prop_assert!(p1 >= p0 - 1e-15);
    }

    #[test]
    fn laguerre_contiguous_relation(n in 1usize..60, alpha in 0.0f64..5.0, t in 0.0f64..30.0) {
        // L_n^{(a)} = L_n^{(a+1)} - L_{n-1}^{(a+1)}
        let lhs = laguerre_unchecked(n, alpha, t);
        let rhs = laguerre_unchecked(n, alpha + 1.0, t) - laguerre_unchecked(n - 1, alpha + 1.0, t);
        let scale = laguerre_unchecked(n, alpha + 1.0, -t);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn laguerre_agrees_with_exact_expansion_relative_to_term_scale(q in 0usize..=50, t in 0.0f64..=50.0) {
        let exact = laguerre_exact(q, t);
        let got = laguerre(q, t).unwrap();
        prop_assert!((got - exact).abs() <= 1e-13 * laguerre_term_scale(q, t).max(1.0));
    }
}
