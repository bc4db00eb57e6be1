//! Shared-scale computation: the standard-recommended max-power-of-two rule
//! plus the comparator-tree depth/pipeline model of the hardware scale unit.

use crate::dyadic::floor_log2_f64;
use crate::formats::{ElementFormat, ScaleE8M0};

/// How the shared scale of a block is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRule {
    /// Largest power of two in the block divided by the largest power of two
    /// representable in the element format.
    MaxPow2,
    /// A constant pre-computed scale.
    Fixed(ScaleE8M0),
}

/// Shared scale for a block of values: `2^(floor(log2 max|v|) - emax(fmt))`,
/// clamped into the finite E8M0 range.
///
/// NaN anywhere in the block yields the NaN scale (0xFF). Inf does too,
/// unless the element format can encode Inf, in which case the scale is
/// taken over the finite values only. An all-zero (or all-special) block
/// gets scale 1.0, which is exact for zeros.
pub fn compute_scale(values: &[f32], fmt: &ElementFormat) -> ScaleE8M0 {
    debug_assert!(!values.is_empty());
    let mut max_abs = 0.0f64;
    for &v in values {
        if v.is_nan() {
            return ScaleE8M0::NAN;
        }
        if v.is_infinite() {
            if fmt.has_inf() {
                continue;
            }
            return ScaleE8M0::NAN;
        }
        max_abs = max_abs.max((v as f64).abs());
    }
    if max_abs == 0.0 {
        return ScaleE8M0::ONE;
    }
    ScaleE8M0::from_exponent(floor_log2_f64(max_abs) - fmt.emax())
}

/// Depth of the comparator tree that finds the block maximum.
pub fn comparator_tree_depth(k: usize) -> u32 {
    debug_assert!(k >= 2);
    k.next_power_of_two().trailing_zeros()
}

/// Pipeline stages of the scale unit: registers are placed so the critical
/// path stays two comparators long.
pub fn pipeline_stages(k: usize) -> u32 {
    comparator_tree_depth(k).div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{E2M1, E5M2, INT8};

    #[test]
    fn spec_examples() {
        // floor(log2 3) = 1, emax = 2 -> 2^-1
        let s = compute_scale(&[0.75, -3.0, 0.125, 0.0], &E2M1);
        assert_eq!(s.byte(), 126);
        assert_eq!(compute_scale(&[0.0; 4], &E2M1).byte(), 127);
        assert_eq!(compute_scale(&[1.0, f32::NAN], &E5M2), ScaleE8M0::NAN);
    }

    #[test]
    fn inf_handling() {
        // Inf with an Inf-capable format: scale from the max finite value.
        let s = compute_scale(&[f32::INFINITY, 2.0, 0.5], &E5M2);
        assert_eq!(s.exponent(), Some(1 - E5M2.emax()));
        // Without an Inf encoding the whole block goes NaN.
        assert_eq!(
            compute_scale(&[f32::INFINITY, 2.0], &E2M1),
            ScaleE8M0::NAN
        );
    }

    #[test]
    fn exponent_clamps() {
        let tiny = [f32::from_bits(1)]; // 2^-149
        assert_eq!(compute_scale(&tiny, &INT8).byte(), 0);
        let huge = [f32::MAX];
        assert_eq!(compute_scale(&huge, &E5M2).byte(), 127 + 127 - 15);
    }

    #[test]
    fn tree_depth_and_stages() {
        assert_eq!(comparator_tree_depth(32), 5);
        assert_eq!(pipeline_stages(32), 3);
        assert_eq!(comparator_tree_depth(4), 2);
        assert_eq!(pipeline_stages(4), 1);
        assert_eq!(comparator_tree_depth(512), 9);
        assert_eq!(pipeline_stages(512), 5);
    }
}
