
use crate::error::{Error, Result};

/// Fixed-point encoding of a positive real multiplier
/// `M = multiplier * 2^-31 * 2^-shift` with `multiplier` in `[2^30, 2^31)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequantParams {
    pub multiplier: i32,
    /// Right shift applied after the Q31 multiply; negative means left.
    pub shift: i32,
}

impl RequantParams {
    /// Decomposes `m = m0 * 2^-shift` with `m0` in `[0.5, 1)` and rounds
    /// `m0` to Q31.
    pub fn from_multiplier(m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidQuantParams(format!(
                "requantization multiplier must be positive, got {m}"
            )));
        }
        let (mut m0, exp) = frexp(m);
        let mut shift = -exp;
        let mut q = (m0 * (1u64 << 31) as f64).round() as i64;
        if q == 1 << 31 {
            q /= 2;
            shift -= 1;
            m0 = 0.5;
        }
        debug_assert!((0.5..1.0).contains(&m0));
        if !(-31..=62).contains(&shift) {
            return Err(Error::InvalidQuantParams(format!(
                "requantization multiplier {m} outside the representable range"
            )));
        }
        Ok(RequantParams {
            multiplier: q as i32,
            shift,
        })
    }

    /// The real multiplier this encoding represents.
    pub fn to_real(self) -> f64 {
        self.multiplier as f64 * 2f64.powi(-31 - self.shift)
    }
}

/// `x = mantissa * 2^exp` with `mantissa` in `[0.5, 1)`, for positive
/// finite `x`.
fn frexp(x: f64) -> (f64, i32) {
    let mut exp = x.log2().floor() as i32 + 1;
    let mut mant = x * 2f64.powi(-exp);
    // log2 rounding can land one off near powers of two
    if mant >= 1.0 {
        mant /= 2.0;
        exp += 1;
    } else if mant < 0.5 {
        mant *= 2.0;
        exp -= 1;
    }
    (mant, exp)
}

/// Requantization multiplier for `s_in * s_w / s_out`.
pub fn derive_requant(s_in: f64, s_w: f64, s_out: f64) -> Result<RequantParams> {
    for (name, s) in [("input", s_in), ("weight", s_w), ("output", s_out)] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidQuantParams(format!("{name} scale must be positive, got {s}")));
        }
    }
    RequantParams::from_multiplier(s_in * s_w / s_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(
            RequantParams::from_multiplier(0.5).unwrap(),
            RequantParams { multiplier: 1 << 30, shift: 0 }
        );
        assert_eq!(
            RequantParams::from_multiplier(0.1).unwrap(),
            RequantParams { multiplier: 1_717_986_918, shift: 3 }
        );
        let one = RequantParams::from_multiplier(1.0).unwrap();
        assert_eq!(one, RequantParams { multiplier: 1 << 30, shift: -1 });
        assert_eq!(derive_requant(0.5, 0.25, 0.25).unwrap(), RequantParams { multiplier: 1 << 30, shift: 0 });
    }

    #[test]
    fn rounding_up_to_one_renormalizes() {
        let m = 1.0 - 1e-12;
        let rq = RequantParams::from_multiplier(m).unwrap();
        assert_eq!(rq, RequantParams { multiplier: 1 << 30, shift: -1 });
    }

    #[test]
    fn rejects_non_positive() {
        assert!(derive_requant(0.0, 1.0, 1.0).is_err());
        assert!(derive_requant(1.0, -1.0, 1.0).is_err());
        assert!(derive_requant(1.0, 1.0, 0.0).is_err());
        assert!(RequantParams::from_multiplier(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_error(m in 1e-6f64..8.0) {
            let rq = RequantParams::from_multiplier(m).unwrap();
            prop_assert!(rq.multiplier >= 1 << 30);
            prop_assert!((rq.to_real() - m).abs() / m < 2f64.powi(-24));
        }
    }
}
