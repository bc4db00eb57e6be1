//! Bit-accurate software model of OCP MX block-scaled arithmetic.
//!
//! The crate models MX formats (low-precision elements sharing an E8M0
//! power-of-two scale), conversions from and to wide floating point with
//! round-to-nearest-even, the standard-defined `Dot`/`DotGeneral`
//! operations built on error-free Kulisch accumulation, tensor-level
//! quantization under per-tensor / per-channel / MX scale sharing, and an
//! FPGA area model for unrolled implementations of those datapaths.
//!
//! Everything is a pure function over immutable values; all arithmetic
//! that feeds a rounding decision is carried out exactly in wide integer
//! form, never through host floating point.

pub mod area;
pub mod convert;
pub mod dot;
pub mod dot_general;
pub mod dyadic;
pub mod formats;
pub mod scale;
pub mod tensor;

pub use formats::{
    BlockFormat, ElementFormat, ElementValue, MxBlock, OverflowMode, ScaleE8M0, SpecialPolicy,
};
pub use scale::ScaleRule;
