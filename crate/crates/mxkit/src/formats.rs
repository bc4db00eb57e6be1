//! Element and scale formats: bit-level encodings, value sets and
//! special-value policies.
//!
//! An element is either a small floating-point number `EeMm` (sign,
//! `e`-bit exponent with bias `2^(e-1)-1`, `m`-bit mantissa, subnormals
//! supported) or a fixed-point integer `INTb` (two's complement raw value
//! carrying an implicit `2^-(b-2)` factor). Blocks pair `k` encoded
//! elements with one shared E8M0 power-of-two scale.
//!
//! Finite element values are exact integer multiples of the format's unit
//! weight `2^unit_exp`; this module works in those integer units so that
//! every downstream product and sum can stay exact.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Behaviour on conversion overflow for formats with special encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OverflowMode {
    /// Out-of-range values become Inf (if encodable) or NaN.
    Overflow,
    /// Out-of-range values clamp to the maximum finite magnitude.
    Saturating,
}

/// Which special encodings an FP element format reserves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialPolicy {
    /// Every code is a finite value.
    None,
    /// The top exponent is reserved: zero mantissa is Inf, the rest NaN
    /// (E5M2 style).
    InfNan(OverflowMode),
    /// Only the all-ones code (per sign) is NaN; no Inf (E4M3 style).
    NanOnly(OverflowMode),
}

impl SpecialPolicy {
    pub fn mode(&self) -> Option<OverflowMode> {
        match self {
            SpecialPolicy::None => None,
            SpecialPolicy::InfNan(m) | SpecialPolicy::NanOnly(m) => Some(*m),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("exponent width {0} outside supported range 2..=6")]
    ExponentWidth(u32),
    #[error("mantissa width {0} outside supported range 1..=5")]
    MantissaWidth(u32),
    #[error("integer width {0} outside supported range 2..=8")]
    IntWidth(u32),
    #[error("block size {0} must be a power of two with log2(k) in 2..=9")]
    BlockSize(usize),
    #[error("cannot parse format {0:?}: {1}")]
    Parse(String, String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("value {0} is not representable in {1}")]
    NotRepresentable(f64, ElementFormat),
}

/// A parameterized element type: floating point `EeMm` or fixed point `INTb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementFormat {
    Fp {
        e: u32,
        m: u32,
        specials: SpecialPolicy,
    },
    Int {
        b: u32,
    },
}

/// The six concrete formats, with their default overflow behaviour.
pub const E5M2: ElementFormat = ElementFormat::Fp {
    e: 5,
    m: 2,
    specials: SpecialPolicy::InfNan(OverflowMode::Overflow),
};
pub const E4M3: ElementFormat = ElementFormat::Fp {
    e: 4,
    m: 3,
    specials: SpecialPolicy::NanOnly(OverflowMode::Overflow),
};
pub const E3M2: ElementFormat = ElementFormat::Fp {
    e: 3,
    m: 2,
    specials: SpecialPolicy::None,
};
pub const E2M3: ElementFormat = ElementFormat::Fp {
    e: 2,
    m: 3,
    specials: SpecialPolicy::None,
};
pub const E2M1: ElementFormat = ElementFormat::Fp {
    e: 2,
    m: 1,
    specials: SpecialPolicy::None,
};
pub const INT8: ElementFormat = ElementFormat::Int { b: 8 };

/// All concrete element formats (block size 32 in the concrete profiles).
pub fn concrete_formats() -> [ElementFormat; 6] {
    [E5M2, E4M3, E3M2, E2M3, E2M1, INT8]
}

/// Decoded element: a special, or a finite value in integer units of
/// `2^unit_exp`. Negative zero is `Finite { neg: true, units: 0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementValue {
    Nan,
    Inf { neg: bool },
    Finite { neg: bool, units: u128 },
}

impl ElementValue {
    pub fn is_nan(&self) -> bool {
        matches!(self, ElementValue::Nan)
    }
    pub fn is_inf(&self) -> bool {
        matches!(self, ElementValue::Inf { .. })
    }
    pub fn is_finite(&self) -> bool {
        matches!(self, ElementValue::Finite { .. })
    }
    /// Signed units for finite values, `None` for specials.
    pub fn signed_units(&self) -> Option<i128> {
        match self {
            ElementValue::Finite { neg, units } => {
                let u = *units as i128;
                Some(if *neg { -u } else { u })
            }
            _ => None,
        }
    }
}

impl ElementFormat {
    pub fn fp(e: u32, m: u32, specials: SpecialPolicy) -> Result<Self, FormatError> {
        let f = ElementFormat::Fp { e, m, specials };
        f.validate()?;
        Ok(f)
    }

    pub fn int(b: u32) -> Result<Self, FormatError> {
        let f = ElementFormat::Int { b };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        match *self {
            ElementFormat::Fp { e, m, .. } => {
                if !(2..=6).contains(&e) {
                    return Err(FormatError::ExponentWidth(e));
                }
                if !(1..=5).contains(&m) {
                    return Err(FormatError::MantissaWidth(m));
                }
                Ok(())
            }
            ElementFormat::Int { b } => {
                if !(2..=8).contains(&b) {
                    return Err(FormatError::IntWidth(b));
                }
                Ok(())
            }
        }
    }

    pub fn is_fp(&self) -> bool {
        matches!(self, ElementFormat::Fp { .. })
    }

    pub fn is_int(&self) -> bool {
        matches!(self, ElementFormat::Int { .. })
    }

    /// Encoded width in bits (`1+e+m` for FP, `b` for INT).
    pub fn width(&self) -> u32 {
        match *self {
            ElementFormat::Fp { e, m, .. } => 1 + e + m,
            ElementFormat::Int { b } => b,
        }
    }

    pub fn specials(&self) -> SpecialPolicy {
        match *self {
            ElementFormat::Fp { specials, .. } => specials,
            ElementFormat::Int { .. } => SpecialPolicy::None,
        }
    }

    pub fn has_nan(&self) -> bool {
        !matches!(self.specials(), SpecialPolicy::None)
    }

    pub fn has_inf(&self) -> bool {
        matches!(self.specials(), SpecialPolicy::InfNan(_))
    }

    /// FP exponent bias, `2^(e-1) - 1`.
    pub fn bias(&self) -> i32 {
        match *self {
            ElementFormat::Fp { e, .. } => (1 << (e - 1)) - 1,
            ElementFormat::Int { .. } => 0,
        }
    }

    /// Exponent of the unit weight: finite values are `units * 2^unit_exp`.
    pub fn unit_exp(&self) -> i32 {
        match *self {
            ElementFormat::Fp { m, .. } => 1 - self.bias() - m as i32,
            ElementFormat::Int { b } => -((b as i32) - 2),
        }
    }

    /// Exponent of the largest representable power of two.
    pub fn emax(&self) -> i32 {
        match *self {
            ElementFormat::Fp { e, specials, .. } => {
                let top_code = (1i32 << e) - 1;
                let max_code = match specials {
                    SpecialPolicy::InfNan(_) => top_code - 1,
                    _ => top_code,
                };
                max_code - self.bias()
            }
            ElementFormat::Int { .. } => 0,
        }
    }

    /// Largest finite magnitude, in units of `2^unit_exp`.
    pub fn max_units(&self) -> u128 {
        match *self {
            ElementFormat::Fp { m, specials, .. } => {
                let top_mant = match specials {
                    // All-ones mantissa at the top exponent is NaN.
                    SpecialPolicy::NanOnly(_) => (1u128 << (m + 1)) - 2,
                    _ => (1u128 << (m + 1)) - 1,
                };
                let top_e = self.emax() + self.bias();
                top_mant << (top_e - 1) as u32
            }
            ElementFormat::Int { b } => (1u128 << (b - 1)) - 1,
        }
    }

    /// Largest finite magnitude as an f64 (exact for all supported formats).
    pub fn max_value(&self) -> f64 {
        self.max_units() as f64 * 2f64.powi(self.unit_exp())
    }

    /// Canonical NaN code: positive sign, all exponent and mantissa bits set.
    /// Only meaningful for formats with a NaN encoding.
    pub fn nan_code(&self) -> u16 {
        debug_assert!(self.has_nan());
        (1 << (self.width() - 1)) - 1
    }

    /// Inf code for the given sign. Only meaningful for `InfNan` formats.
    pub fn inf_code(&self, neg: bool) -> u16 {
        debug_assert!(self.has_inf());
        match *self {
            ElementFormat::Fp { e, m, .. } => {
                let exp_all_ones = ((1u16 << e) - 1) << m;
                let sign = if neg { 1u16 << (e + m) } else { 0 };
                sign | exp_all_ones
            }
            ElementFormat::Int { .. } => unreachable!(),
        }
    }

    /// Decode a bit pattern into its exact value or special.
    pub fn decode(&self, code: u16) -> ElementValue {
        debug_assert!(code < (1 << self.width()), "code exceeds format width");
        match *self {
            ElementFormat::Fp { e, m, specials } => {
                let neg = (code >> (e + m)) & 1 == 1;
                let exp_field = ((code >> m) & ((1 << e) - 1)) as u32;
                let mant_field = (code & ((1 << m) - 1)) as u128;
                let top = (1u32 << e) - 1;
                match specials {
                    SpecialPolicy::InfNan(_) if exp_field == top => {
                        return if mant_field == 0 {
                            ElementValue::Inf { neg }
                        } else {
                            ElementValue::Nan
                        };
                    }
                    SpecialPolicy::NanOnly(_)
                        if exp_field == top && mant_field == (1 << m) - 1 =>
                    {
                        return ElementValue::Nan;
                    }
                    _ => {}
                }
                let units = if exp_field == 0 {
                    mant_field
                } else {
                    ((1u128 << m) + mant_field) << (exp_field - 1)
                };
                ElementValue::Finite { neg, units }
            }
            ElementFormat::Int { b } => {
                // Sign-extend the b-bit two's complement raw value.
                let shift = 16 - b;
                let raw = ((code << shift) as i16 as i32) >> shift;
                ElementValue::Finite {
                    neg: raw < 0,
                    units: raw.unsigned_abs() as u128,
                }
            }
        }
    }

    /// Decode straight to f64 (exact for every supported format).
    pub fn decode_f64(&self, code: u16) -> f64 {
        match self.decode(code) {
            ElementValue::Nan => f64::NAN,
            ElementValue::Inf { neg } => {
                if neg {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
            ElementValue::Finite { neg, units } => {
                let v = units as f64 * 2f64.powi(self.unit_exp());
                if neg {
                    -v
                } else {
                    v
                }
            }
        }
    }

    /// Exact encode of a positive magnitude given in units. `None` when the
    /// magnitude is not in the format's value set.
    fn encode_units(&self, units: u128) -> Option<u16> {
        if units > self.max_units() {
            return None;
        }
        match *self {
            ElementFormat::Fp { m, .. } => {
                if units < (1 << (m + 1)) {
                    // Subnormal (E=0) or first normal binade (E=1).
                    if units < (1 << m) {
                        Some(units as u16)
                    } else {
                        Some((1u16 << m) | (units as u16 & ((1 << m) - 1)))
                    }
                } else {
                    let nbits = 128 - units.leading_zeros();
                    let shift = nbits - (m + 1);
                    if units >> shift << shift != units {
                        return None; // needs more than m+1 significant bits
                    }
                    let exp_field = (shift + 1) as u16;
                    let mant_field = ((units >> shift) as u16) & ((1 << m) - 1);
                    Some((exp_field << m) | mant_field)
                }
            }
            ElementFormat::Int { .. } => Some(units as u16),
        }
    }

    /// Encode an exactly representable value; `NotRepresentable` otherwise.
    /// `-0.0` maps to the sign-bit-only code for FP and to raw 0 for INT.
    pub fn encode(&self, value: f64) -> Result<u16, EncodeError> {
        let err = || EncodeError::NotRepresentable(value, *self);
        if value.is_nan() {
            return if self.has_nan() {
                Ok(self.nan_code())
            } else {
                Err(err())
            };
        }
        if value.is_infinite() {
            return if self.has_inf() {
                Ok(self.inf_code(value < 0.0))
            } else {
                Err(err())
            };
        }
        let neg = value.is_sign_negative();
        let mag = value.abs();
        // Convert |value| to integer units; reject anything off the unit grid.
        let (mant, exp) = crate::dyadic::decompose_f64(mag).expect("finite");
        let ue = self.unit_exp();
        let units: u128 = if mant == 0 {
            0
        } else if exp >= ue {
            (mant as u128) << (exp - ue) as u32
        } else {
            let shift = (ue - exp) as u32;
            if shift >= 128 || (mant as u128) >> shift << shift != mant as u128 {
                return Err(err());
            }
            (mant as u128) >> shift
        };
        match *self {
            ElementFormat::Fp { e, m, .. } => {
                let code = self.encode_units(units).ok_or_else(err)?;
                let sign = if neg { 1u16 << (e + m) } else { 0 };
                Ok(sign | code)
            }
            ElementFormat::Int { b } => {
                // INT range is asymmetric: -2^(b-1) is representable.
                let raw: i128 = if neg { -(units as i128) } else { units as i128 };
                let lo = -(1i128 << (b - 1));
                let hi = (1i128 << (b - 1)) - 1;
                if raw < lo || raw > hi {
                    return Err(err());
                }
                Ok((raw as u16) & ((1 << b) - 1))
            }
        }
    }

    /// Iterate every code of the format.
    pub fn all_codes(&self) -> impl Iterator<Item = u16> {
        0..(1u16 << self.width())
    }
}

impl fmt::Display for ElementFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ElementFormat::Int { b } => write!(f, "int{b}"),
            ElementFormat::Fp { e, m, specials } => {
                write!(f, "e{e}m{m}")?;
                let mode = |f: &mut fmt::Formatter<'_>, mode: OverflowMode| match mode {
                    OverflowMode::Overflow => write!(f, ":ofl"),
                    OverflowMode::Saturating => write!(f, ":sat"),
                };
                match specials {
                    SpecialPolicy::None => Ok(()),
                    SpecialPolicy::InfNan(md) => {
                        write!(f, ":inf-nan")?;
                        mode(f, md)
                    }
                    SpecialPolicy::NanOnly(md) => {
                        write!(f, ":nan-only")?;
                        mode(f, md)
                    }
                }
            }
        }
    }
}

impl FromStr for ElementFormat {
    type Err = FormatError;

    /// Grammar: `intB` or `eEmM[:specials][:mode]` with
    /// specials in `none | inf-nan | nan-only` and mode in
    /// `ofl | overflow | sat | saturating`. E5M2 defaults to `inf-nan`,
    /// E4M3 to `nan-only`, everything else to `none`; the default mode is
    /// `ofl`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = |msg: &str| FormatError::Parse(s.to_string(), msg.to_string());
        let mut parts = s.split(':');
        let base = parts.next().unwrap_or("");
        let flags: Vec<&str> = parts.collect();
        if let Some(bs) = base.strip_prefix("int") {
            if !flags.is_empty() {
                return Err(parse_err("int formats take no special flags"));
            }
            let b: u32 = bs.parse().map_err(|_| parse_err("bad integer width"))?;
            return ElementFormat::int(b);
        }
        let rest = base
            .strip_prefix('e')
            .ok_or_else(|| parse_err("expected eEmM or intB"))?;
        let (es, ms) = rest
            .split_once('m')
            .ok_or_else(|| parse_err("expected eEmM"))?;
        let e: u32 = es.parse().map_err(|_| parse_err("bad exponent width"))?;
        let m: u32 = ms.parse().map_err(|_| parse_err("bad mantissa width"))?;

        let mut specials: Option<&str> = None;
        let mut mode: Option<OverflowMode> = None;
        for flag in flags {
            match flag {
                "none" | "inf-nan" | "nan-only" => {
                    if specials.replace(flag).is_some() {
                        return Err(parse_err("duplicate specials flag"));
                    }
                }
                "ofl" | "overflow" => {
                    if mode.replace(OverflowMode::Overflow).is_some() {
                        return Err(parse_err("duplicate mode flag"));
                    }
                }
                "sat" | "saturating" => {
                    if mode.replace(OverflowMode::Saturating).is_some() {
                        return Err(parse_err("duplicate mode flag"));
                    }
                }
                other => return Err(parse_err(&format!("unknown flag {other:?}"))),
            }
        }
        let specials = specials.unwrap_or(match (e, m) {
            (5, 2) => "inf-nan",
            (4, 3) => "nan-only",
            _ => "none",
        });
        let md = mode.unwrap_or(OverflowMode::Overflow);
        let policy = match specials {
            "none" => {
                if mode.is_some() {
                    return Err(parse_err("overflow mode requires a special policy"));
                }
                SpecialPolicy::None
            }
            "inf-nan" => SpecialPolicy::InfNan(md),
            "nan-only" => SpecialPolicy::NanOnly(md),
            _ => unreachable!(),
        };
        ElementFormat::fp(e, m, policy)
    }
}

/// The shared E8M0 scale byte: `2^(byte-127)` for bytes 0..=254, NaN at 255.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleE8M0(u8);

impl ScaleE8M0 {
    pub const NAN: Self = ScaleE8M0(255);
    pub const ONE: Self = ScaleE8M0(127);
    pub const MIN: Self = ScaleE8M0(0);
    pub const MAX_FINITE: Self = ScaleE8M0(254);

    pub const fn from_byte(byte: u8) -> Self {
        ScaleE8M0(byte)
    }

    /// Scale for `2^exp`, saturating into the representable range.
    pub fn from_exponent(exp: i32) -> Self {
        ScaleE8M0((exp.clamp(-127, 127) + 127) as u8)
    }

    pub const fn byte(self) -> u8 {
        self.0
    }

    pub const fn is_nan(self) -> bool {
        self.0 == 255
    }

    /// Unbiased exponent, `None` for NaN.
    pub fn exponent(self) -> Option<i32> {
        if self.is_nan() {
            None
        } else {
            Some(self.0 as i32 - 127)
        }
    }

    /// Scale factor as f64, NaN-propagating.
    pub fn value(self) -> f64 {
        match self.exponent() {
            Some(e) => 2f64.powi(e),
            None => f64::NAN,
        }
    }

    /// Product of two scales: exponents add, NaN propagates, the result
    /// saturates to the E8M0 range instead of wrapping.
    pub fn mul(self, other: ScaleE8M0) -> ScaleE8M0 {
        match (self.exponent(), other.exponent()) {
            (Some(a), Some(b)) => ScaleE8M0::from_exponent(a + b),
            _ => ScaleE8M0::NAN,
        }
    }
}

impl fmt::Display for ScaleE8M0 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exponent() {
            Some(e) => write!(f, "2^{e}"),
            None => write!(f, "NaN"),
        }
    }
}

/// An element format paired with a block size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockFormat {
    element: ElementFormat,
    k: usize,
}

impl BlockFormat {
    pub fn new(element: ElementFormat, k: usize) -> Result<Self, FormatError> {
        element.validate()?;
        if !k.is_power_of_two() || !(4..=512).contains(&k) {
            return Err(FormatError::BlockSize(k));
        }
        Ok(BlockFormat { element, k })
    }

    pub fn element(&self) -> &ElementFormat {
        &self.element
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// `k` encoded elements plus their shared scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MxBlock {
    pub scale: ScaleE8M0,
    pub codes: Vec<u16>,
}

impl MxBlock {
    pub fn new(scale: ScaleE8M0, codes: Vec<u16>) -> Self {
        MxBlock { scale, codes }
    }
}
