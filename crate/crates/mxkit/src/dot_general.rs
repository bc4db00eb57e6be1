//! The `DotGeneral` standard-defined operation: replicated `Dot` units whose
//! outputs cross shared-scale boundaries through normalising adders.
//!
//! The normalising adder mirrors a floating-point adder datapath: align the
//! smaller operand into guard/round/sticky positions, add, renormalise and
//! round to nearest even. Because guard/round/sticky preserve exactly the
//! information RNE needs, the software model computes the exact sum and
//! rounds once, which is bit-equivalent to the hardware datapath.

use num_bigint::BigInt;
use num_traits::Zero;
use thiserror::Error;

use crate::dot::{dot, dot_output_width, pairwise_tree, DotResult, InfFlag};
use crate::dyadic::round_to_precision;
use crate::formats::{BlockFormat, MxBlock};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DotGeneralError {
    #[error("operand shapes differ or are empty: {0} vs {1} blocks")]
    ShapeMismatch(usize, usize),
    #[error(transparent)]
    Dot(#[from] crate::dot::DotError),
}

/// A normalised value `mantissa * 2^exponent` flowing between adder stages.
/// Nonzero operands carry exactly `width - 1` magnitude bits (the top bit
/// set), matching a signed register of `width` bits; zero is `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormOperand {
    pub mantissa: BigInt,
    pub exponent: i32,
}

impl NormOperand {
    pub fn zero() -> Self {
        NormOperand {
            mantissa: BigInt::zero(),
            exponent: 0,
        }
    }

    pub fn new(mantissa: BigInt, exponent: i32) -> Self {
        NormOperand { mantissa, exponent }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    /// Round to the config's precision and renormalise to the canonical
    /// fixed-width form.
    pub fn normalize(&self, cfg: &NormAddConfig) -> NormOperand {
        if self.is_zero() {
            return NormOperand::zero();
        }
        let precision = cfg.mantissa_width - 1;
        let (m, e) = round_to_precision(&self.mantissa, self.exponent, precision, i32::MIN + 64);
        if m.is_zero() {
            return NormOperand::zero();
        }
        // Pad to exactly `precision` magnitude bits: hardware keeps the
        // register width fixed, so trailing zeros are part of the form.
        let bits = m.magnitude().bits() as u32;
        debug_assert!(bits <= precision);
        let pad = precision - bits;
        NormOperand {
            mantissa: m << pad,
            exponent: e - pad as i32,
        }
    }

    /// Value as f64 (correctly rounded).
    pub fn to_f64(&self) -> f64 {
        crate::dyadic::Dyadic::new(self.mantissa.clone(), self.exponent).to_f64()
    }
}

/// Width of the mantissa carried between normalising adder stages
/// (two's-complement bits: one sign bit plus `mantissa_width - 1` magnitude
/// bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormAddConfig {
    pub mantissa_width: u32,
}

impl NormAddConfig {
    pub fn new(mantissa_width: u32) -> Self {
        assert!(mantissa_width >= 2, "mantissa width must be at least 2");
        NormAddConfig { mantissa_width }
    }

    /// Default width for a given dot-product configuration: the output
    /// width `b_o` of the producing Dot circuit.
    pub fn for_dot(fmt: &BlockFormat) -> Self {
        NormAddConfig::new(dot_output_width(fmt.element(), fmt.k()))
    }
}

/// Add two operands with exponent alignment, renormalisation and RNE
/// rounding back to the configured width. Exact whenever no bits shift past
/// the sticky position.
pub fn norm_add(x: &NormOperand, y: &NormOperand, cfg: &NormAddConfig) -> NormOperand {
    if x.is_zero() {
        return y.normalize(cfg);
    }
    if y.is_zero() {
        return x.normalize(cfg);
    }
    let exp = x.exponent.min(y.exponent);
    let a = &x.mantissa << (x.exponent - exp) as u32;
    let b = &y.mantissa << (y.exponent - exp) as u32;
    NormOperand::new(a + b, exp).normalize(cfg)
}

/// Outcome of a `DotGeneral`: the reduced value plus OR-combined specials.
#[derive(Debug, Clone, PartialEq)]
pub struct DotGeneralResult {
    pub value: NormOperand,
    pub nan_flag: bool,
    pub inf_flag: InfFlag,
}

impl DotGeneralResult {
    pub fn to_f64(&self) -> f64 {
        if self.nan_flag {
            return f64::NAN;
        }
        match self.inf_flag {
            InfFlag::Positive => f64::INFINITY,
            InfFlag::Negative => f64::NEG_INFINITY,
            InfFlag::None => self.value.to_f64(),
        }
    }
}

/// Turn a dot result into a normalising-adder operand by applying its
/// combined scale as an exponent offset (shifts only, no multiplier).
/// NaN-scaled results contribute zero and must be flagged by the caller.
pub fn operand_from_dot(r: &DotResult, cfg: &NormAddConfig) -> NormOperand {
    match r.combined_scale.exponent() {
        None => NormOperand::zero(),
        Some(se) => {
            NormOperand::new(r.acc.raw().clone(), r.acc.lsb_exp() + se).normalize(cfg)
        }
    }
}

/// `DotGeneral(X, Y, S, T) = sum_c Dot(X_c, Y_c, S_c, T_c)`, reduced over a
/// fixed pairwise tree of normalising adders in block order.
pub fn dot_general(
    x: &[MxBlock],
    y: &[MxBlock],
    fmt: &BlockFormat,
    cfg: &NormAddConfig,
) -> Result<DotGeneralResult, DotGeneralError> {
    if x.len() != y.len() || x.is_empty() {
        return Err(DotGeneralError::ShapeMismatch(x.len(), y.len()));
    }
    let mut nan = false;
    let mut pos_inf = false;
    let mut neg_inf = false;
    let mut leaves = Vec::with_capacity(x.len());
    for (xb, yb) in x.iter().zip(y) {
        let r = dot(xb, yb, fmt)?;
        nan |= r.nan_flag || r.combined_scale.is_nan();
        match r.inf_flag {
            InfFlag::Positive => pos_inf = true,
            InfFlag::Negative => neg_inf = true,
            InfFlag::None => {}
        }
        leaves.push(operand_from_dot(&r, cfg));
    }
    if pos_inf && neg_inf {
        nan = true;
        pos_inf = false;
        neg_inf = false;
    }
    let value = pairwise_tree(leaves, |a, b| norm_add(&a, &b, cfg));
    Ok(DotGeneralResult {
        value,
        nan_flag: nan,
        inf_flag: if pos_inf {
            InfFlag::Positive
        } else if neg_inf {
            InfFlag::Negative
        } else {
            InfFlag::None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::quantize_block;
    use crate::formats::{BlockFormat, ElementFormat, ScaleE8M0, INT8};
    use crate::scale::ScaleRule;

    fn op(m: i64, e: i32) -> NormOperand {
        NormOperand::new(BigInt::from(m), e)
    }

    #[test]
    fn exact_add() {
        let cfg = NormAddConfig::new(12);
        // 1.5 + 2.5 = 4.0, exactly representable
        let r = norm_add(&op(3, -1), &op(5, -1), &cfg);
        assert_eq!(r.to_f64(), 4.0);
        // canonical form: 11 magnitude bits
        assert_eq!(r.mantissa.magnitude().bits(), 11);
    }

    #[test]
    fn zero_identity() {
        let cfg = NormAddConfig::new(8);
        let x = op(3, -1).normalize(&cfg);
        assert_eq!(norm_add(&x, &NormOperand::zero(), &cfg), x);
        assert_eq!(norm_add(&NormOperand::zero(), &x, &cfg), x);
        let r = norm_add(&x, &op(-3, -1), &cfg);
        assert!(r.is_zero());
    }

    #[test]
    fn tie_rounds_to_even() {
        let w = 6u32; // 5 magnitude bits
        let cfg = NormAddConfig::new(w);
        // 16 + 0.5 with 5-bit precision: grid lsb is 1 -> tie to even keeps 16
        let r = norm_add(&op(16, 0).normalize(&cfg), &op(1, -1), &cfg);
        assert_eq!(r.to_f64(), 16.0);
        // 17 + 0.5 -> tie rounds up to 18
        let r = norm_add(&op(17, 0).normalize(&cfg), &op(1, -1), &cfg);
        assert_eq!(r.to_f64(), 18.0);
        // 16 + 0.75 is above the tie: rounds to 17
        let r = norm_add(&op(16, 0).normalize(&cfg), &op(3, -2), &cfg);
        assert_eq!(r.to_f64(), 17.0);
    }

    #[test]
    fn single_block_equals_dot() {
        let fmt = BlockFormat::new(INT8, 4).unwrap();
        let cfg = NormAddConfig::for_dot(&fmt);
        let vals = [0.5f32, -1.25, 0.75, 1.0];
        let a = quantize_block(&vals, &fmt, &ScaleRule::MaxPow2);
        let b = quantize_block(&vals, &fmt, &ScaleRule::MaxPow2);
        let d = dot(&a, &b, &fmt).unwrap();
        let g = dot_general(
            std::slice::from_ref(&a),
            std::slice::from_ref(&b),
            &fmt,
            &cfg,
        )
        .unwrap();
        assert_eq!(g.to_f64(), d.to_f64());
    }

    #[test]
    fn two_blocks_of_ones() {
        let fmt = BlockFormat::new(INT8, 4).unwrap();
        let cfg = NormAddConfig::for_dot(&fmt);
        let ones = quantize_block(&[1.0; 4], &fmt, &ScaleRule::MaxPow2);
        let x = vec![ones.clone(), ones.clone()];
        let r = dot_general(&x, &x, &fmt, &cfg).unwrap();
        assert_eq!(r.to_f64(), 8.0);
        assert!(!r.nan_flag);
    }

    #[test]
    fn shape_mismatch() {
        let fmt = BlockFormat::new(INT8, 4).unwrap();
        let cfg = NormAddConfig::for_dot(&fmt);
        let ones = quantize_block(&[1.0; 4], &fmt, &ScaleRule::MaxPow2);
        let e = dot_general(&[ones.clone(), ones.clone()], &[ones], &fmt, &cfg);
        assert!(matches!(e, Err(DotGeneralError::ShapeMismatch(2, 1))));
        let e = dot_general(&[], &[], &fmt, &cfg);
        assert!(matches!(e, Err(DotGeneralError::ShapeMismatch(0, 0))));
    }

    #[test]
    fn scale_transfer_is_bit_identical() {
        let fmt = BlockFormat::new(ElementFormat::int(6).unwrap(), 8).unwrap();
        let cfg = NormAddConfig::for_dot(&fmt);
        let vals = [0.25f32, 0.5, -0.75, 1.0, -0.125, 0.375, 0.625, -1.0];
        let mk = |s: u8| {
            let mut b = quantize_block(&vals, &fmt, &ScaleRule::Fixed(ScaleE8M0::ONE));
            b.scale = ScaleE8M0::from_byte(s);
            b
        };
        // Shift S_c up by 2^3 and T_c down by 2^3: output must not change.
        let x1 = vec![mk(127), mk(130)];
        let y1 = vec![mk(127), mk(124)];
        let x2 = vec![mk(127), mk(127)];
        let y2 = vec![mk(127), mk(127)];
        let r1 = dot_general(&x1, &y1, &fmt, &cfg).unwrap();
        let r2 = dot_general(&x2, &y2, &fmt, &cfg).unwrap();
        assert_eq!(r1.value, r2.value);
    }
}
