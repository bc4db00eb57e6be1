//! Exact dyadic arithmetic used by the conversion and accumulation paths.
//!
//! Values are carried as `mantissa * 2^exp` with an arbitrary-precision
//! mantissa, so every rounding decision is made on the exact value rather
//! than through an intermediate `f64`.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

/// Exact value `mant * 2^exp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dyadic {
    pub mant: BigInt,
    pub exp: i32,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic {
            mant: BigInt::zero(),
            exp: 0,
        }
    }

    pub fn new(mant: BigInt, exp: i32) -> Self {
        Dyadic { mant, exp }
    }

    pub fn from_i128(mant: i128, exp: i32) -> Self {
        Dyadic {
            mant: BigInt::from(mant),
            exp,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    /// Exact sum; the result is expressed at the smaller of the two exponents.
    pub fn add(&self, other: &Dyadic) -> Dyadic {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let exp = self.exp.min(other.exp);
        let a = &self.mant << (self.exp - exp) as u32;
        let b = &other.mant << (other.exp - exp) as u32;
        Dyadic { mant: a + b, exp }
    }

    pub fn mul(&self, other: &Dyadic) -> Dyadic {
        Dyadic {
            mant: &self.mant * &other.mant,
            exp: self.exp + other.exp,
        }
    }

    pub fn neg(&self) -> Dyadic {
        Dyadic {
            mant: -&self.mant,
            exp: self.exp,
        }
    }

    /// Magnitude bit length of the mantissa.
    pub fn mant_bits(&self) -> u64 {
        self.mant.magnitude().bits()
    }

    /// Exponent of the most significant set bit of |value|, i.e. floor(log2 |v|).
    /// Returns `None` for zero.
    pub fn floor_log2(&self) -> Option<i32> {
        if self.is_zero() {
            None
        } else {
            Some(self.exp + self.mant_bits() as i32 - 1)
        }
    }

    /// Value as f64, correctly rounded. Saturates to +/-inf outside the f64 range.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let (mant, exp) = round_to_precision(&self.mant, self.exp, 53, -1074);
        if mant.is_zero() {
            return 0.0;
        }
        let msb = exp + mant.magnitude().bits() as i32 - 1;
        if msb > 1023 {
            return if self.mant.is_negative() {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            };
        }
        let m: i64 = (&mant).try_into().expect("53-bit mantissa fits i64");
        // Split the scaling so powi never over/underflows on its own.
        let half = exp / 2;
        (m as f64) * 2f64.powi(half) * 2f64.powi(exp - half)
    }
}

/// Exact (mantissa, exponent) decomposition of a finite f64.
/// Zero (either sign) decomposes to `(0, 0)`; NaN/Inf return `None`.
pub fn decompose_f64(x: f64) -> Option<(i64, i32)> {
    if !x.is_finite() {
        return None;
    }
    if x == 0.0 {
        return Some((0, 0));
    }
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let e = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (mant, exp) = if e == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), e - 1075)
    };
    Some((if neg { -mant } else { mant }, exp))
}

/// floor(log2 |x|) for finite nonzero x, computed from the bit pattern.
pub fn floor_log2_f64(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x != 0.0);
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32;
    if e != 0 {
        e - 1023
    } else {
        let frac = bits & ((1u64 << 52) - 1);
        63 - frac.leading_zeros() as i32 - 1074
    }
}

/// `value / 2^shift` rounded to the nearest integer, ties to even.
pub fn rne_shift_right(value: &BigInt, shift: u32) -> BigInt {
    if shift == 0 {
        return value.clone();
    }
    let neg = value.is_negative();
    let mag = value.magnitude();
    let q = mag >> shift;
    let rem = mag - (&q << shift);
    let half = num_bigint::BigUint::from(1u8) << (shift - 1);
    let rounded = match rem.cmp(&half) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1u8,
        std::cmp::Ordering::Equal => {
            if q.bit(0) {
                q + 1u8
            } else {
                q
            }
        }
    };
    let out = BigInt::from(rounded);
    if neg {
        -out
    } else {
        out
    }
}

/// Round `mant * 2^exp` to at most `precision` significant bits with the
/// result's least significant bit no lower than `2^min_lsb` (the subnormal
/// floor). Ties go to even. Returns the rounded `(mant, exp)`; exact inputs
/// are re-expressed on the target grid without changing value.
pub fn round_to_precision(mant: &BigInt, exp: i32, precision: u32, min_lsb: i32) -> (BigInt, i32) {
    if mant.is_zero() {
        return (BigInt::zero(), 0);
    }
    let nbits = mant.magnitude().bits() as i32;
    let msb = exp + nbits - 1;
    let target = (msb - precision as i32 + 1).max(min_lsb);
    if target <= exp {
        return (mant << (exp - target) as u32, target);
    }
    let mut rounded = rne_shift_right(mant, (target - exp) as u32);
    let mut target = target;
    // A carry out of the top bit leaves an exactly even mantissa.
    while rounded.magnitude().bits() > precision as u64 {
        debug_assert!(!rounded.bit(0));
        rounded >>= 1;
        target += 1;
    }
    if rounded.is_zero() {
        return (BigInt::zero(), 0);
    }
    (rounded, target)
}

/// Correctly rounded conversion of `mant * 2^exp` to f32 (round to nearest
/// even, overflow to infinity).
pub fn round_dyadic_to_f32(mant: &BigInt, exp: i32) -> f32 {
    if mant.is_zero() {
        return 0.0;
    }
    let (m, e) = round_to_precision(mant, exp, 24, -149);
    if m.is_zero() {
        return 0.0;
    }
    let msb = e + m.magnitude().bits() as i32 - 1;
    if msb > 127 {
        return if mant.is_negative() {
            f32::NEG_INFINITY
        } else {
            f32::INFINITY
        };
    }
    let mi: i64 = (&m).try_into().expect("24-bit mantissa fits i64");
    // Exact: a 24-bit integer scaled by a power of two within f64 range.
    ((mi as f64) * 2f64.powi(e)) as f32
}
