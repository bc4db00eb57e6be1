//! Round-to-nearest-even correctness of block quantization, checked against
//! an exhaustive nearest-with-ties-to-even search over the enumerated
//! value set, tie points included.

mod common;

use mxkit::convert::{dequantize_block, quantize_block};
use mxkit::formats::{
    BlockFormat, ElementFormat, OverflowMode, ScaleE8M0, SpecialPolicy,
};
use mxkit::scale::ScaleRule;

/// All finite values of a format, with the parity RNE needs for tie
/// breaks: the integer position of the value on the format's grid.
fn finite_values(fmt: &ElementFormat) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    for code in fmt.all_codes() {
        let v = fmt.decode_f64(code);
        if !v.is_finite() {
            continue;
        }
        // Grid index parity: low mantissa bit for FP, raw parity for INT.
        let even = code & 1 == 0;
        out.push((v, even));
    }
    out
}

/// Overflow threshold: values at or past the midpoint between max finite
/// and the next (virtual) grid point round past max. The virtual point is
/// max + one top-binade spacing; its parity continues the mantissa count.
fn eval_oracle(fmt: &ElementFormat, x: f64) -> OracleOutcome {
    let set = finite_values(fmt);
    let mut best: Option<(f64, bool, f64)> = None; // (value, even, dist)
    for &(v, even) in &set {
        let d = (x - v).abs();
        match best {
            None => best = Some((v, even, d)),
            Some((_, be, bd)) => {
                // nearest wins; a genuine tie between distinct neighbours
                // goes to the even grid position
                if d < bd || (d == bd && even && !be) {
                    best = Some((v, even, d));
                }
            }
        }
    }
    let (bv, _, bd) = best.unwrap();
    // Check against the virtual next point beyond max finite.
    let max = fmt.max_value();
    if x.abs() > max {
        let spacing = match *fmt {
            ElementFormat::Fp { m, .. } => {
                2f64.powi(fmt.emax() - m as i32)
            }
            ElementFormat::Int { b } => 2f64.powi(-(b as i32 - 2)),
        };
        let virt = max + spacing;
        let d_virt = (x.abs() - virt).abs();
        let d_max = (x.abs() - max).abs();
        // Parity of the virtual point: one grid step past the max code.
        let virt_even = match *fmt {
            ElementFormat::Fp { .. } => {
                let max_code = fmt.encode(max).unwrap();
                (max_code + 1) & 1 == 0
            }
            ElementFormat::Int { .. } => false, // unused: INT saturates
        };
        let overflows = d_virt < d_max || (d_virt == d_max && virt_even);
        if overflows {
            return OracleOutcome::Overflow { neg: x < 0.0 };
        }
    }
    let _ = bd;
    OracleOutcome::Value(if x < 0.0 && bv == 0.0 { -bv } else { bv })
}

enum OracleOutcome {
    Value(f64),
    Overflow { neg: bool },
}

fn check_grid(fmt: ElementFormat) {
    let bf = BlockFormat::new(fmt, 4).unwrap();
    let rule = ScaleRule::Fixed(ScaleE8M0::ONE);
    let max = fmt.max_value();
    // Dense grid spanning two binades either side of the format max, plus
    // every exact midpoint of adjacent representable values.
    let mut inputs: Vec<f64> = Vec::new();
    let lo = max / 4.0;
    let hi = max * 4.0;
    let steps = 997; // odd and prime: lands off the grid almost everywhere
    for i in 0..=steps {
        let x = lo + (hi - lo) * (i as f64) / (steps as f64);
        inputs.push(x as f32 as f64);
    }
    let mut values: Vec<f64> = finite_values(&fmt).iter().map(|p| p.0).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in values.windows(2) {
        let mid = (w[0] + w[1]) / 2.0;
        if mid as f32 as f64 == mid {
            inputs.push(mid);
        }
    }
    // The overflow boundary midpoint itself.
    let spacing = match fmt {
        ElementFormat::Fp { m, .. } => 2f64.powi(fmt.emax() - m as i32),
        ElementFormat::Int { b } => 2f64.powi(-(b as i32 - 2)),
    };
    inputs.push(max + spacing / 2.0);
    inputs.push(-(max + spacing / 2.0));

    for &x in &inputs {
        let xf = x as f32;
        if !xf.is_finite() {
            continue;
        }
        let block = quantize_block(&[xf, 0.0, 0.0, 0.0], &bf, &rule);
        let got = dequantize_block(&block, &bf)[0];
        match eval_oracle(&fmt, xf as f64) {
            OracleOutcome::Value(want) => {
                assert_eq!(
                    got, want as f32,
                    "{fmt}: input {x} quantized to {got}, oracle says {want}"
                );
            }
            OracleOutcome::Overflow { neg } => {
                let sign = if neg { -1.0f32 } else { 1.0 };
                match fmt.specials() {
                    SpecialPolicy::None
                    | SpecialPolicy::InfNan(OverflowMode::Saturating)
                    | SpecialPolicy::NanOnly(OverflowMode::Saturating) => {
                        assert_eq!(got, sign * max as f32, "{fmt}: saturate {x}");
                    }
                    SpecialPolicy::InfNan(OverflowMode::Overflow) => {
                        assert_eq!(got, sign * f32::INFINITY, "{fmt}: overflow {x}");
                    }
                    SpecialPolicy::NanOnly(OverflowMode::Overflow) => {
                        assert!(got.is_nan(), "{fmt}: overflow {x} must be NaN");
                    }
                }
            }
        }
    }
}

#[test]
fn rne_matches_exhaustive_search_all_fp_formats() {
    for e in 2..=6u32 {
        for m in 1..=5u32 {
            for sp in [
                SpecialPolicy::None,
                SpecialPolicy::InfNan(OverflowMode::Overflow),
                SpecialPolicy::InfNan(OverflowMode::Saturating),
                SpecialPolicy::NanOnly(OverflowMode::Overflow),
                SpecialPolicy::NanOnly(OverflowMode::Saturating),
            ] {
                check_grid(ElementFormat::fp(e, m, sp).unwrap());
            }
        }
    }
}

#[test]
fn rne_matches_exhaustive_search_int_formats() {
    for b in 2..=8u32 {
        check_grid(ElementFormat::int(b).unwrap());
    }
}

#[test]
fn scaled_rounding_divides_first() {
    // v/scale = 2.5 must tie to 2.0 even when v itself is not a tie point.
    let fmt = BlockFormat::new(mxkit::formats::E2M1, 4).unwrap();
    let rule = ScaleRule::Fixed(ScaleE8M0::from_byte(129)); // scale 4
    let b = quantize_block(&[10.0, 0.0, 0.0, 0.0], &fmt, &rule);
    assert_eq!(dequantize_block(&b, &fmt)[0], 8.0); // 2.0 * 4
}
