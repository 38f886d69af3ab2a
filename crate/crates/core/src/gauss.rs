//! Gaussian tail function and its inverse.
//!
//! Both are evaluated from `erfc` plus bisection so results do not depend on
//! platform-specific rational approximations.

/// Upper tail of the standard normal distribution, `Pr{Z > x}`.
pub fn q_function(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] on `(0, 1)`, accurate to 1e-10 in the argument.
///
/// Returns `+inf` for `p <= 0`, `-inf` for `p >= 1`, and NaN for NaN.
pub fn q_inverse(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    // Q(-40) rounds to 1 and Q(40) underflows to ~0, so this brackets every
    // representable probability strictly inside (0, 1).
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(1.644_853_626_951_472) - 0.05).abs() < 1e-12);
        assert!((q_inverse(0.05) - 1.644_853_626_951_472).abs() < 1e-10);
        assert!((q_inverse(0.1) - 1.281_551_565_544_6).abs() < 1e-10);
        assert!(q_inverse(0.5).abs() < 1e-10);
    }

    #[test]
    fn limits() {
        assert_eq!(q_inverse(0.0), f64::INFINITY);
        assert_eq!(q_inverse(1.0), f64::NEG_INFINITY);
        assert!(q_function(-50.0) == 1.0);
        assert!(q_function(50.0) < 1e-300);
    }

    #[test]
    fn round_trip() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let x = q_inverse(p);
            assert!((q_function(x) - p).abs() < 1e-10, "p = {p}");
        }
    }
}
