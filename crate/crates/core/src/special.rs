//! Special functions used by the likelihood head and segment statistics.
//!
//! Implemented in-crate so no statistics dependency is mandatory; unit
//! tests pin them against an independent implementation.

use std::f64::consts::PI;

const LN_SQRT_2PI: f64 = 0.918938533204672741780329736406;

// Lanczos g=7, n=9 coefficients.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma domain: x > 0, got {x}");
    if x < 0.5 {
        // Reflection keeps the Lanczos argument away from zero.
        return PI.ln() - (PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut sum = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let base = z + 7.5;
    LN_SQRT_2PI + (z + 0.5) * base.ln() - base + sum.ln()
}

/// Digamma (derivative of `ln_gamma`) for x > 0.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma domain: x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    // Shift into the asymptotic regime.
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln() - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
}

/// Regularized incomplete beta function I_x(a, b) for a, b > 0 and x in [0, 1].
pub fn betainc_regularized(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    debug_assert!((0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() / a) * beta_cf(a, b, x)
    } else {
        1.0 - betainc_regularized(b, a, 1.0 - x)
    }
}

/// Lentz continued fraction for the incomplete beta function.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    debug_assert!(df > 0.0);
    if !t.is_finite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    betainc_regularized(df / 2.0, 0.5, df / (df + t * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_anchors() {
        // Γ(1) = Γ(2) = 1, Γ(0.5) = √π, Γ(1.5) = √π/2
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - 0.5 * PI.ln()).abs() < 1e-13);
        assert!((ln_gamma(1.5) - (PI.sqrt() / 2.0).ln()).abs() < 1e-13);
        // Γ(10) = 9! = 362880
        assert!((ln_gamma(10.0) - 362880.0_f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn ln_gamma_recurrence() {
        // ln Γ(x+1) = ln Γ(x) + ln x, across the range the likelihood uses.
        for &x in &[0.7, 1.0, 2.3, 11.0, 313.0, 5e4, 1e6] {
            let lhs = ln_gamma(x + 1.0);
            let rhs = ln_gamma(x) + x.ln();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "recurrence failed at {x}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn ln_gamma_matches_independent_impl_to_1e12() {
        let mut x = 1.0;
        while x <= 1e6 {
            let ours = ln_gamma(x);
            let theirs = statrs::function::gamma::ln_gamma(x);
            let tol = 1e-12 * ours.abs().max(1.0);
            assert!((ours - theirs).abs() <= tol, "x={x}: {ours} vs {theirs}");
            x *= 1.37;
        }
    }

    #[test]
    fn digamma_anchors() {
        // ψ(1) = −γ
        const EULER_GAMMA: f64 = 0.57721566490153286060651209;
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        for &x in &[0.3, 1.7, 4.0, 29.0, 1234.5] {
            let theirs = statrs::function::gamma::digamma(x);
            assert!((digamma(x) - theirs).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn digamma_is_ln_gamma_derivative() {
        for &x in &[0.8, 1.5, 3.0, 42.0] {
            let h = 1e-6 * x;
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((digamma(x) - fd).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn betainc_boundaries_and_symmetry() {
        assert_eq!(betainc_regularized(2.0, 3.0, 0.0), 0.0);
        assert_eq!(betainc_regularized(2.0, 3.0, 1.0), 1.0);
        // I_x(a,b) = 1 − I_{1−x}(b,a)
        for &(a, b, x) in &[(2.0, 3.0, 0.25), (0.5, 0.5, 0.7), (10.0, 1.5, 0.4)] {
            let lhs = betainc_regularized(a, b, x);
            let rhs = 1.0 - betainc_regularized(b, a, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-13);
        }
        // I_x(1,1) = x
        assert!((betainc_regularized(1.0, 1.0, 0.3) - 0.3).abs() < 1e-13);
    }

    #[test]
    fn t_test_p_values_match_reference() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for &(t, df) in &[(0.5, 3.0), (2.1, 10.0), (4.2, 2.0), (0.0, 8.0), (12.0, 30.0)] {
            let ours = student_t_two_sided_p(t, df);
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            let theirs = 2.0 * (1.0 - dist.cdf(t.abs()));
            assert!((ours - theirs).abs() < 1e-10, "t={t}, df={df}: {ours} vs {theirs}");
        }
    }
}
