//! Numerically stable scalar helpers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_finite<T: Scalar>(z: T, what: &str) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what}: non-finite input {z}")))
    }
}

/// Logistic function `1 / (1 + exp(-z))`.
///
/// Only ever exponentiates a non-positive argument, so it cannot overflow.
pub fn stable_sigmoid<T: Scalar>(z: T) -> Result<T> {
    check_finite(z, "stable_sigmoid")?;
    Ok(sigmoid(z))
}

/// Unchecked variant used on hot paths where the input is known finite.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `-log(sigmoid(z)) = log(1 + exp(-z))`, i.e. softplus of `-z`.
pub fn neg_log_sigmoid<T: Scalar>(z: T) -> Result<T> {
    check_finite(z, "neg_log_sigmoid")?;
    Ok(softplus_neg(z))
}

#[inline]
pub(crate) fn softplus_neg<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// log-sum-exp of a non-empty slice.
pub fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Softmax probabilities written into `out`; returns the log normaliser.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) -> T {
    let lse = logsumexp(logits);
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - lse).exp();
    }
    lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(stable_sigmoid(0.0_f64).unwrap(), 0.5);
        assert_eq!(stable_sigmoid(0.0_f32).unwrap(), 0.5);
    }

    #[test]
    fn sigmoid_large_arguments() {
        let s = stable_sigmoid(50.0_f64).unwrap();
        let expect = 1.0 - (-50.0_f64).exp();
        assert!(((s - expect) / expect).abs() <= 1e-15);
        assert_eq!(stable_sigmoid(1e4_f64).unwrap(), 1.0);
        let tiny = stable_sigmoid(-1e4_f64).unwrap();
        assert!(tiny >= 0.0 && tiny.is_finite());
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(matches!(stable_sigmoid(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(stable_sigmoid(f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(neg_log_sigmoid(f64::NEG_INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn neg_log_sigmoid_values() {
        assert_eq!(neg_log_sigmoid(0.0_f64).unwrap(), std::f64::consts::LN_2);
        let v = neg_log_sigmoid(-1000.0_f64).unwrap();
        assert!(((v - 1000.0) / 1000.0).abs() <= 1e-12);
        assert_eq!(neg_log_sigmoid(1000.0_f64).unwrap(), 0.0);
    }

    #[test]
    fn logsumexp_handles_large_values() {
        let v = logsumexp(&[1000.0_f64, 1000.0]);
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sigmoid_symmetry(z in -1e4_f64..1e4) {
            let s = stable_sigmoid(z).unwrap() + stable_sigmoid(-z).unwrap();
            prop_assert!((s - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn sigmoid_monotone(a in -800.0_f64..800.0, b in -800.0_f64..800.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(stable_sigmoid(lo).unwrap() <= stable_sigmoid(hi).unwrap());
        }

        #[test]
        fn nls_matches_log_of_sigmoid(z in -30.0_f64..30.0) {
            let a = neg_log_sigmoid(z).unwrap();
            let b = -stable_sigmoid(z).unwrap().ln();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
