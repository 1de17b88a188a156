//! Bernoulli function `B(z) = z / (exp(z) - 1)`.

use crate::error::{Error, Result};
use crate::physics::MAX_EXPONENT;

/// Below this magnitude the Taylor series is used.
pub const SERIES_THRESHOLD: f64 = 1e-2;

/// Four-term Taylor expansion around zero. Truncation error is below
/// `z^6 / 30240`, i.e. under 1e-16 for `|z| < 1e-2`.
pub fn bernoulli_series(z: f64) -> f64 {
    let z2 = z * z;
    1.0 - 0.5 * z + z2 / 12.0 - z2 * z2 / 720.0
}

/// Closed form, arranged so that no intermediate overflows for large `|z|`.
pub fn bernoulli_exact(z: f64) -> f64 {
    if z <= 0.0 {
        z / z.exp_m1()
    } else {
        let e = (-z).exp();
        z * e / -(-z).exp_m1()
    }
}

/// `B(z)`, positive for every finite `z` in `[-700, 700]`.
#[inline]
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < SERIES_THRESHOLD {
        bernoulli_series(z)
    } else {
        bernoulli_exact(z)
    }
}

/// [`bernoulli`] with a range check on the argument.
pub fn bernoulli_checked(z: f64) -> Result<f64> {
    if !(z.abs() <= MAX_EXPONENT) {
        return Err(Error::Range { exponent: z, node: None });
    }
    Ok(bernoulli(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn value_at_zero() {
        assert_eq!(bernoulli(0.0), 1.0);
    }

    #[test]
    fn small_argument() {
        // B(x) = 1 - x/2 + x^2/12 - ..., so B(1e-8) = 0.999999995 + 8.3e-18
        assert!((bernoulli(1e-8) - 0.999_999_995).abs() <= 1e-15);
    }

    #[test]
    fn reflection_identity() {
        for z in [0.5f64, 5.0, 50.0, 500.0, -0.5, -5.0, -50.0, -500.0] {
            let lhs = z.exp() * bernoulli(z);
            let rhs = bernoulli(-z);
            assert!((lhs / rhs - 1.0).abs() < 1e-13, "z = {z}");
        }
    }

    #[test]
    fn large_arguments() {
        assert!((bernoulli(-700.0) - 700.0).abs() < 1e-10);
        let b = bernoulli(700.0);
        assert!(b > 0.0 && (b / (700.0 * (-700.0f64).exp()) - 1.0).abs() < 1e-12);
        assert!(bernoulli_checked(701.0).is_err());
        assert!(bernoulli_checked(f64::NAN).is_err());
        assert!(bernoulli_checked(-700.0).is_ok());
    }

    #[test]
    fn branches_agree_at_threshold() {
        for z in [SERIES_THRESHOLD, -SERIES_THRESHOLD] {
            assert!((bernoulli_series(z) - bernoulli_exact(z)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn shift_identity(z in -100.0f64..100.0) {
            let lhs = bernoulli(z) + z;
            let rhs = bernoulli(-z);
            prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1.0));
        }

        #[test]
        fn positive_and_decreasing(z in -700.0f64..690.0, dz in 1e-3f64..10.0) {
            prop_assert!(bernoulli(z) > 0.0);
            prop_assert!(bernoulli(z + dz) <= bernoulli(z));
        }
    }
}
