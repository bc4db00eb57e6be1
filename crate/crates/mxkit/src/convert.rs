//! Conversions between wide floating point (FP32/BFloat16) and MX blocks,
//! and normalisation of dot-product outputs back into wide or MX form.
//!
//! All rounding is round-to-nearest-even performed on exact wide-integer
//! intermediates; no decision ever depends on host float rounding. Special
//! values route per the OCP FP8 behaviours: NaN propagates into an element
//! NaN when the format has one, otherwise into the shared-scale NaN
//! encoding (0xFF); Inf is treated as NaN when the format cannot encode it.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use crate::dot::KulischAcc;
use crate::dyadic::{decompose_f64, round_to_precision, rne_shift_right, Dyadic};
use crate::formats::{
    BlockFormat, ElementFormat, MxBlock, OverflowMode, ScaleE8M0, SpecialPolicy,
};
use crate::scale::ScaleRule;

/// bfloat16: binary32 truncated to 8 mantissa bits (same exponent range).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bf16(u16);

impl Bf16 {
    pub const fn from_bits(bits: u16) -> Self {
        Bf16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Exact widening: every bfloat16 value is a binary32 value.
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    pub fn is_nan(self) -> bool {
        self.to_f32().is_nan()
    }

    /// Round-to-nearest-even conversion from f32.
    pub fn from_f32(x: f32) -> Self {
        Bf16::from_f64(x as f64)
    }

    /// Round-to-nearest-even conversion from f64, via the exact value.
    pub fn from_f64(x: f64) -> Self {
        if x.is_nan() {
            return Bf16(0x7FC0);
        }
        if x.is_infinite() {
            return Bf16(if x < 0.0 { 0xFF80 } else { 0x7F80 });
        }
        let (mant, exp) = decompose_f64(x).expect("finite");
        bf16_from_exact(&BigInt::from(mant), exp, x.is_sign_negative())
    }
}

fn bf16_from_exact(mant: &BigInt, exp: i32, neg_zero: bool) -> Bf16 {
    if mant.is_zero() {
        return Bf16(if neg_zero { 0x8000 } else { 0 });
    }
    let neg = mant.is_negative();
    let (rm, re) = round_to_precision(mant, exp, 8, -133);
    if rm.is_zero() {
        return Bf16(if neg { 0x8000 } else { 0 });
    }
    let msb = re + rm.magnitude().bits() as i32 - 1;
    if msb > 127 {
        return Bf16(if neg { 0xFF80 } else { 0x7F80 });
    }
    let mi: i64 = (&rm).try_into().expect("8-bit mantissa");
    let value = (mi as f64) * 2f64.powi(re); // exact
    let bits = (value as f32).to_bits();
    debug_assert_eq!(bits & 0xFFFF, 0, "bf16 value has a clean low half");
    Bf16((bits >> 16) as u16)
}

/// Result of rounding an exact value into a format's value grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rounded {
    Finite { neg: bool, units: u128 },
    /// The rounded magnitude exceeds the largest finite value.
    Overflow { neg: bool },
}

/// Round `mant * 2^exp` into `fmt`'s value set by RNE with an unbounded
/// exponent, then classify against the largest finite magnitude.
pub(crate) fn round_into_format(fmt: &ElementFormat, mant: &BigInt, exp: i32) -> Rounded {
    let neg = mant.is_negative();
    if mant.is_zero() {
        return Rounded::Finite { neg, units: 0 };
    }
    match *fmt {
        ElementFormat::Fp { m, .. } => {
            let (rm, re) = round_to_precision(mant, exp, m + 1, fmt.unit_exp());
            if rm.is_zero() {
                return Rounded::Finite { neg, units: 0 };
            }
            let msb = re + rm.magnitude().bits() as i32 - 1;
            if msb > fmt.emax() {
                return Rounded::Overflow { neg };
            }
            let mi: i128 = (&rm).try_into().expect("element mantissa fits i128");
            let units = mi.unsigned_abs() << (re - fmt.unit_exp()) as u32;
            if units > fmt.max_units() {
                Rounded::Overflow { neg }
            } else {
                Rounded::Finite { neg, units }
            }
        }
        ElementFormat::Int { b } => {
            let ue = fmt.unit_exp();
            let raw = if exp >= ue {
                // Exact alignment; anything needing more than ~2^en bits
                // is far past the saturation bound.
                let shift = (exp - ue) as u32;
                if mant.magnitude().bits() + shift as u64 > 100 {
                    return Rounded::Overflow { neg };
                }
                mant << shift
            } else {
                rne_shift_right(mant, (ue - exp) as u32)
            };
            if raw.is_zero() {
                return Rounded::Finite { neg, units: 0 };
            }
            let max = BigInt::from((1i128 << (b - 1)) - 1);
            let min = BigInt::from(-(1i128 << (b - 1)));
            if raw > max || raw < min {
                Rounded::Overflow { neg }
            } else {
                let r: i128 = (&raw).try_into().unwrap();
                Rounded::Finite {
                    neg: r < 0,
                    units: r.unsigned_abs(),
                }
            }
        }
    }
}

/// Encode a rounding outcome, applying the format's overflow behaviour.
pub(crate) fn encode_rounded(fmt: &ElementFormat, rounded: Rounded) -> u16 {
    match rounded {
        Rounded::Finite { neg, units } => encode_finite_units(fmt, neg, units),
        Rounded::Overflow { neg } => match fmt.specials() {
            SpecialPolicy::None => max_finite_code(fmt, neg),
            SpecialPolicy::InfNan(OverflowMode::Overflow) => fmt.inf_code(neg),
            SpecialPolicy::NanOnly(OverflowMode::Overflow) => fmt.nan_code(),
            SpecialPolicy::InfNan(OverflowMode::Saturating)
            | SpecialPolicy::NanOnly(OverflowMode::Saturating) => max_finite_code(fmt, neg),
        },
    }
}

fn encode_finite_units(fmt: &ElementFormat, neg: bool, units: u128) -> u16 {
    match *fmt {
        ElementFormat::Fp { e, m, .. } => {
            let sign = if neg { 1u16 << (e + m) } else { 0 };
            let mag = fmt
                .encode(units as f64 * 2f64.powi(fmt.unit_exp()))
                .expect("rounded units are representable");
            sign | mag
        }
        ElementFormat::Int { b } => {
            let raw: i128 = if neg { -(units as i128) } else { units as i128 };
            (raw as u16) & ((1 << b) - 1)
        }
    }
}

fn max_finite_code(fmt: &ElementFormat, neg: bool) -> u16 {
    encode_finite_units(fmt, neg, fmt.max_units())
}

/// A classified input lane, ready for encoding.
enum Lane {
    Nan,
    Inf { neg: bool },
    Finite { neg_zero: bool, mant: BigInt, exp: i32 },
}

fn classify_f32(v: f32) -> Lane {
    if v.is_nan() {
        Lane::Nan
    } else if v.is_infinite() {
        Lane::Inf { neg: v < 0.0 }
    } else {
        let (mant, exp) = decompose_f64(v as f64).expect("finite");
        Lane::Finite {
            neg_zero: mant == 0 && v.is_sign_negative(),
            mant: BigInt::from(mant),
            exp,
        }
    }
}

fn quantize_lanes(lanes: Vec<Lane>, el: &ElementFormat, rule: &ScaleRule) -> MxBlock {
    let k = lanes.len();
    // Inf is "treated as a NaN" by formats that cannot encode it.
    let lane_is_nan = |l: &Lane| match l {
        Lane::Nan => true,
        Lane::Inf { .. } => !el.has_inf(),
        Lane::Finite { .. } => false,
    };
    if lanes.iter().any(lane_is_nan) && !el.has_nan() {
        // Only the shared scale can carry the NaN.
        return MxBlock::new(ScaleE8M0::NAN, vec![0; k]);
    }
    let scale = match rule {
        ScaleRule::Fixed(s) => *s,
        ScaleRule::MaxPow2 => {
            // Max |v| over finite lanes; special lanes carry no statistics.
            let mut max_exp: Option<i32> = None;
            for lane in &lanes {
                if let Lane::Finite { mant, exp, .. } = lane {
                    if !mant.is_zero() {
                        let fl = exp + mant.magnitude().bits() as i32 - 1;
                        max_exp = Some(max_exp.map_or(fl, |m: i32| m.max(fl)));
                    }
                }
            }
            match max_exp {
                Some(e) => ScaleE8M0::from_exponent(e - el.emax()),
                None => ScaleE8M0::ONE,
            }
        }
    };
    let Some(scale_exp) = scale.exponent() else {
        return MxBlock::new(ScaleE8M0::NAN, vec![0; k]);
    };
    let codes = lanes
        .into_iter()
        .map(|lane| match lane {
            Lane::Nan => el.nan_code(),
            Lane::Inf { neg } => {
                if el.has_inf() {
                    el.inf_code(neg)
                } else {
                    el.nan_code()
                }
            }
            Lane::Finite { neg_zero, mant, exp } => {
                if mant.is_zero() {
                    return encode_finite_units(el, neg_zero, 0);
                }
                encode_rounded(el, round_into_format(el, &mant, exp - scale_exp))
            }
        })
        .collect();
    MxBlock::new(scale, codes)
}

/// Quantize `k` wide values into an MX block: the scale comes from `rule`,
/// each element is `v / scale` rounded to nearest even into the element
/// value set, with overflow handled per the format's special policy.
pub fn quantize_block(values: &[f32], fmt: &BlockFormat, rule: &ScaleRule) -> MxBlock {
    assert_eq!(values.len(), fmt.k(), "block length must equal k");
    quantize_group(values, fmt.element(), rule)
}

/// Same conversion for a scale-sharing group of any length (tensor regimes
/// share one scale over groups that are not blocks).
pub(crate) fn quantize_group(values: &[f32], el: &ElementFormat, rule: &ScaleRule) -> MxBlock {
    let lanes = values.iter().map(|&v| classify_f32(v)).collect();
    quantize_lanes(lanes, el, rule)
}

/// Exact `scale * element` for one code, rounded once to binary32.
pub(crate) fn decode_scaled(el: &ElementFormat, code: u16, scale_exp: i32) -> f32 {
    match el.decode(code) {
        crate::formats::ElementValue::Nan => f32::NAN,
        crate::formats::ElementValue::Inf { neg } => {
            if neg {
                f32::NEG_INFINITY
            } else {
                f32::INFINITY
            }
        }
        crate::formats::ElementValue::Finite { neg, units } => {
            // Exact in f64: a <=12-bit significand times a power of two.
            let v = units as f64 * 2f64.powi(el.unit_exp() + scale_exp);
            (if neg { -v } else { v }) as f32
        }
    }
}

/// Expand an MX block back to binary32: the exact per-lane product
/// `scale * element`, rounded once to the target type. A NaN scale forces
/// every output lane to NaN.
pub fn dequantize_block(block: &MxBlock, fmt: &BlockFormat) -> Vec<f32> {
    let el = fmt.element();
    let Some(scale_exp) = block.scale.exponent() else {
        return vec![f32::NAN; block.codes.len()];
    };
    block
        .codes
        .iter()
        .map(|&code| decode_scaled(el, code, scale_exp))
        .collect()
}

/// Apply the combined scale to an exact accumulator value and round to
/// binary32. NaN scales propagate.
pub fn normalize_to_f32(acc: &KulischAcc, combined_scale: ScaleE8M0) -> f32 {
    let Some(scale_exp) = combined_scale.exponent() else {
        return f32::NAN;
    };
    crate::dyadic::round_dyadic_to_f32(acc.raw(), acc.lsb_exp() + scale_exp)
}

/// Apply the combined scale to an exact accumulator value and round to
/// bfloat16 by round-to-nearest-even.
pub fn normalize_to_bf16(acc: &KulischAcc, combined_scale: ScaleE8M0) -> Bf16 {
    let Some(scale_exp) = combined_scale.exponent() else {
        return Bf16(0x7FC0);
    };
    bf16_from_exact(acc.raw(), acc.lsb_exp() + scale_exp, false)
}

/// Normalise a block of dot-product outputs into a fresh MX block. The
/// shared scale is recomputed over the exact output values (the block's
/// contents changed, so the old scale no longer applies).
pub fn normalize_outputs_to_mx(
    outputs: &[(&KulischAcc, ScaleE8M0)],
    fmt: &BlockFormat,
) -> MxBlock {
    assert_eq!(outputs.len(), fmt.k(), "output count must equal k");
    let lanes = outputs
        .iter()
        .map(|(acc, scale)| match scale.exponent() {
            None => Lane::Nan,
            Some(se) => {
                let value = Dyadic::new(acc.raw().clone(), acc.lsb_exp() + se);
                Lane::Finite {
                    neg_zero: false,
                    mant: value.mant,
                    exp: value.exp,
                }
            }
        })
        .collect();
    quantize_lanes(lanes, fmt.element(), &ScaleRule::MaxPow2)
}
