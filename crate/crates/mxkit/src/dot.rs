//! The `Dot` standard-defined operation: exact products of block elements,
//! error-free fixed-point (Kulisch) accumulation over a pairwise binary
//! tree, and special-value flag generation.
//!
//! Products and sums are computed on the integer-unit grid of the element
//! format, so the accumulator holds the mathematically exact sum; the
//! shared scales are factored out and combined separately.

use num_bigint::BigInt;
use num_traits::Zero;
use thiserror::Error;

use crate::formats::{BlockFormat, ElementFormat, ElementValue, MxBlock, ScaleE8M0};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DotError {
    #[error("blocks have {a} and {b} lanes but the format expects {k}")]
    LaneCount { a: usize, b: usize, k: usize },
}

/// Signed infinity flag of a dot result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfFlag {
    None,
    Positive,
    Negative,
}

/// Width of one encoded element, `b_i`.
pub fn element_width(fmt: &ElementFormat) -> u32 {
    fmt.width()
}

/// Width of the product accumulator, `b_int`: every product of two finite
/// element values is exactly representable in a signed register this wide.
pub fn kulisch_width(fmt: &ElementFormat) -> u32 {
    match *fmt {
        ElementFormat::Fp { e, m, .. } => 2 * (1 + (1 << e) + (m - 1)),
        ElementFormat::Int { b } => 2 * b,
    }
}

/// Width of the tree output, `b_o = b_int + log2(k)`.
pub fn dot_output_width(fmt: &ElementFormat, k: usize) -> u32 {
    kulisch_width(fmt) + k.trailing_zeros()
}

/// Exponent of the accumulator's bit-0 weight: the smallest nonzero product
/// of two element values sits exactly at bit 0.
pub fn kulisch_lsb_exp(fmt: &ElementFormat) -> i32 {
    2 * fmt.unit_exp()
}

/// Fixed-point exact accumulator: `raw * 2^lsb_exp` in a signed register of
/// `width` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KulischAcc {
    raw: BigInt,
    width: u32,
    lsb_exp: i32,
}

impl KulischAcc {
    pub(crate) fn new(raw: BigInt, width: u32, lsb_exp: i32) -> Self {
        KulischAcc { raw, width, lsb_exp }
    }

    pub fn raw(&self) -> &BigInt {
        &self.raw
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn lsb_exp(&self) -> i32 {
        self.lsb_exp
    }

    /// Whether the raw value fits the signed two's-complement range of
    /// `width` bits.
    pub fn fits_width(&self) -> bool {
        let bound = BigInt::from(1) << (self.width - 1);
        self.raw >= -&bound && self.raw < bound
    }

    /// Accumulator value as f64 (correctly rounded; exact for in-range sums).
    pub fn to_f64(&self) -> f64 {
        crate::dyadic::Dyadic::new(self.raw.clone(), self.lsb_exp).to_f64()
    }
}

/// Result of a `Dot`: the exact unscaled sum, the combined scale, and the
/// special flags raised by the input lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct DotResult {
    pub acc: KulischAcc,
    pub combined_scale: ScaleE8M0,
    pub nan_flag: bool,
    pub inf_flag: InfFlag,
}

impl DotResult {
    /// The scaled dot-product value as f64.
    pub fn to_f64(&self) -> f64 {
        if self.nan_flag {
            return f64::NAN;
        }
        match self.inf_flag {
            InfFlag::Positive => return f64::INFINITY,
            InfFlag::Negative => return f64::NEG_INFINITY,
            InfFlag::None => {}
        }
        match self.combined_scale.exponent() {
            None => f64::NAN,
            Some(se) => {
                crate::dyadic::Dyadic::new(self.acc.raw().clone(), self.acc.lsb_exp() + se)
                    .to_f64()
            }
        }
    }
}

/// Reduce items pairwise: adjacent pairs combine level by level, an odd
/// element passes through. Integer addition makes the shape value-invisible,
/// but the same order is used everywhere rounding could occur.
pub(crate) fn pairwise_tree<T, F: Fn(T, T) -> T>(mut items: Vec<T>, f: F) -> T {
    assert!(!items.is_empty());
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(f(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.into_iter().next().unwrap()
}

/// Exact pairwise sum of lane products, with special-lane flags.
#[derive(Debug, Clone)]
pub(crate) struct LaneSum {
    pub raw: BigInt,
    pub nan: bool,
    pub pos_inf: bool,
    pub neg_inf: bool,
}

/// Sum the exact products of paired lanes on the format's unit-squared
/// grid. Special lanes contribute zero and raise flags: NaN times anything
/// is NaN; Inf times zero is NaN; Inf times a nonzero carries the product
/// sign.
pub(crate) fn sum_products(el: &ElementFormat, a: &[u16], b: &[u16]) -> LaneSum {
    debug_assert_eq!(a.len(), b.len());
    let mut nan = false;
    let mut pos_inf = false;
    let mut neg_inf = false;
    // Products of e<=5 formats fit i128; wider ones go through BigInt.
    let big = matches!(el, ElementFormat::Fp { e: 6, .. });
    let mut products: Vec<BigInt> = Vec::with_capacity(a.len());
    for (&ca, &cb) in a.iter().zip(b) {
        match (el.decode(ca), el.decode(cb)) {
            (ElementValue::Nan, _) | (_, ElementValue::Nan) => nan = true,
            (ElementValue::Inf { neg }, other) | (other, ElementValue::Inf { neg }) => {
                match other {
                    ElementValue::Finite { units: 0, .. } => nan = true,
                    ElementValue::Inf { neg: n2 } | ElementValue::Finite { neg: n2, .. } => {
                        if neg == n2 {
                            pos_inf = true;
                        } else {
                            neg_inf = true;
                        }
                    }
                    ElementValue::Nan => unreachable!(),
                }
            }
            (
                ElementValue::Finite { neg: na, units: ua },
                ElementValue::Finite { neg: nb, units: ub },
            ) => {
                if big {
                    let p = BigInt::from(ua) * BigInt::from(ub);
                    products.push(if na != nb { -p } else { p });
                } else {
                    let p = (ua as i128) * (ub as i128);
                    products.push(BigInt::from(if na != nb { -p } else { p }));
                }
            }
        }
    }
    if products.is_empty() {
        products.push(BigInt::zero());
    }
    LaneSum {
        raw: pairwise_tree(products, |x, y| x + y),
        nan,
        pos_inf,
        neg_inf,
    }
}

/// `Dot(A, B, s, t) = (s t) * sum_p A_p B_p` with the sum held exactly.
///
/// Special lanes contribute zero to the accumulator and raise flags:
/// NaN anywhere (including a NaN input scale) sets `nan_flag`; Inf times a
/// nonzero finite sets the signed `inf_flag`; Inf times zero, or infinities
/// of both signs, degrade to NaN.
pub fn dot(a: &MxBlock, b: &MxBlock, fmt: &BlockFormat) -> Result<DotResult, DotError> {
    let k = fmt.k();
    if a.codes.len() != k || b.codes.len() != k {
        return Err(DotError::LaneCount {
            a: a.codes.len(),
            b: b.codes.len(),
            k,
        });
    }
    let el = fmt.element();
    let width = dot_output_width(el, k);
    let lsb = kulisch_lsb_exp(el);
    let combined_scale = a.scale.mul(b.scale);

    let sum = if a.scale.is_nan() || b.scale.is_nan() {
        // A NaN scale makes every lane of the block NaN.
        LaneSum {
            raw: BigInt::zero(),
            nan: true,
            pos_inf: false,
            neg_inf: false,
        }
    } else {
        sum_products(el, &a.codes, &b.codes)
    };

    let mut nan = sum.nan;
    let mut pos_inf = sum.pos_inf;
    let mut neg_inf = sum.neg_inf;
    if pos_inf && neg_inf {
        nan = true;
        pos_inf = false;
        neg_inf = false;
    }
    let inf_flag = if pos_inf {
        InfFlag::Positive
    } else if neg_inf {
        InfFlag::Negative
    } else {
        InfFlag::None
    };

    Ok(DotResult {
        acc: KulischAcc::new(sum.raw, width, lsb),
        combined_scale,
        nan_flag: nan,
        inf_flag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::quantize_block;
    use crate::formats::{E2M1, E5M2, INT8};
    use crate::scale::ScaleRule;

    fn blockfmt(el: ElementFormat, k: usize) -> BlockFormat {
        BlockFormat::new(el, k).unwrap()
    }

    #[test]
    fn table_widths() {
        assert_eq!(kulisch_width(&E2M1), 10);
        assert_eq!(kulisch_width(&INT8), 16);
        assert_eq!(dot_output_width(&INT8, 32), 21);
        assert_eq!(dot_output_width(&E5M2, 32), 2 * (1 + 32 + 1) + 5);
        assert_eq!(element_width(&E5M2), 8);
    }

    #[test]
    fn lsb_exponents() {
        assert_eq!(kulisch_lsb_exp(&E2M1), -2);
        assert_eq!(kulisch_lsb_exp(&INT8), -12);
        assert_eq!(kulisch_lsb_exp(&ElementFormat::int(2).unwrap()), 0);
    }

    #[test]
    fn all_ones_int8_block() {
        let fmt = blockfmt(INT8, 4);
        let ones = quantize_block(&[1.0; 4], &fmt, &ScaleRule::MaxPow2);
        let r = dot(&ones, &ones, &fmt).unwrap();
        assert_eq!(r.acc.raw(), &BigInt::from(16384));
        assert_eq!(r.acc.lsb_exp(), -12);
        assert_eq!(r.combined_scale.byte(), 127);
        assert_eq!(r.to_f64(), 4.0);
        assert!(!r.nan_flag);
        assert!(r.acc.fits_width());
    }

    #[test]
    fn nan_lane_sets_flag() {
        let fmt = blockfmt(E5M2, 4);
        let a = quantize_block(&[f32::NAN, 1.0, 1.0, 1.0], &fmt, &ScaleRule::MaxPow2);
        let b = quantize_block(&[1.0; 4], &fmt, &ScaleRule::MaxPow2);
        let r = dot(&a, &b, &fmt).unwrap();
        assert!(r.nan_flag);
        assert!(r.to_f64().is_nan());
    }

    #[test]
    fn inf_lane_rules() {
        let fmt = blockfmt(E5M2, 4);
        let rule = ScaleRule::Fixed(ScaleE8M0::ONE);
        let inf = quantize_block(&[f32::INFINITY, 1.0, 0.0, 0.0], &fmt, &rule);
        let pos = quantize_block(&[1.0; 4], &fmt, &rule);
        let r = dot(&inf, &pos, &fmt).unwrap();
        assert_eq!(r.inf_flag, InfFlag::Positive);
        assert!(!r.nan_flag);
        // Inf times zero raises NaN instead.
        let zeros = quantize_block(&[0.0; 4], &fmt, &rule);
        let r = dot(&inf, &zeros, &fmt).unwrap();
        assert!(r.nan_flag);
        // Opposing infinities collapse to NaN.
        let both = quantize_block(&[f32::INFINITY, f32::NEG_INFINITY, 0.0, 0.0], &fmt, &rule);
        let ones = quantize_block(&[1.0; 4], &fmt, &rule);
        let r = dot(&both, &ones, &fmt).unwrap();
        assert!(r.nan_flag);
        assert_eq!(r.inf_flag, InfFlag::None);
    }

    #[test]
    fn nan_scale_zeroes_acc() {
        let fmt = blockfmt(E2M1, 4);
        let a = MxBlock::new(ScaleE8M0::NAN, vec![0b0010; 4]);
        let b = MxBlock::new(ScaleE8M0::ONE, vec![0b0010; 4]);
        let r = dot(&a, &b, &fmt).unwrap();
        assert!(r.nan_flag);
        assert!(r.acc.raw().is_zero());
        assert!(r.combined_scale.is_nan());
    }

    #[test]
    fn scale_factoring_leaves_raw_unchanged(){
        let fmt = blockfmt(INT8, 4);
        let vals = [0.5f32, -1.25, 0.75, 1.0];
        let a1 = quantize_block(&vals, &fmt, &ScaleRule::Fixed(ScaleE8M0::ONE));
        let mut a2 = a1.clone();
        a2.scale = ScaleE8M0::from_byte(130);
        let b = quantize_block(&vals, &fmt, &ScaleRule::Fixed(ScaleE8M0::ONE));
        let r1 = dot(&a1, &b, &fmt).unwrap();
        let r2 = dot(&a2, &b, &fmt).unwrap();
        assert_eq!(r1.acc.raw(), r2.acc.raw());
        assert_eq!(
            r2.combined_scale.exponent().unwrap() - r1.combined_scale.exponent().unwrap(),
            3
        );
    }

    #[test]
    fn lane_count_mismatch() {
        let fmt = blockfmt(INT8, 4);
        let a = MxBlock::new(ScaleE8M0::ONE, vec![0; 4]);
        let b = MxBlock::new(ScaleE8M0::ONE, vec![0; 8]);
        assert!(matches!(
            dot(&a, &b, &fmt),
            Err(DotError::LaneCount { a: 4, b: 8, k: 4 })
        ));
    }
}
