//! Shared helpers for the oracle-based integration tests. Everything here
//! recomputes values through `num_rational` / plain f64 bit work, staying
//! independent of the library's integer-unit arithmetic.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mxkit::formats::{ElementFormat, MxBlock, OverflowMode, ScaleE8M0, SpecialPolicy};

/// 2^e as an exact rational.
pub fn pow2(e: i32) -> BigRational {
    if e >= 0 {
        BigRational::new(BigInt::one() << e as u32, BigInt::one())
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-e) as u32)
    }
}

/// Exact rational value of a finite f64.
pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A spread of element formats: the six concrete ones plus assorted corners
/// of the supported parameter space.
pub fn format_pool() -> Vec<ElementFormat> {
    let mut pool = mxkit::formats::concrete_formats().to_vec();
    pool.push(ElementFormat::fp(6, 5, SpecialPolicy::None).unwrap());
    pool.push(ElementFormat::fp(6, 1, SpecialPolicy::InfNan(OverflowMode::Saturating)).unwrap());
    pool.push(ElementFormat::fp(2, 5, SpecialPolicy::None).unwrap());
    pool.push(ElementFormat::fp(3, 4, SpecialPolicy::NanOnly(OverflowMode::Overflow)).unwrap());
    pool.push(ElementFormat::int(2).unwrap());
    pool.push(ElementFormat::int(3).unwrap());
    pool.push(ElementFormat::int(5).unwrap());
    pool
}

/// Random block of finite-valued codes with a random in-range scale.
pub fn random_finite_block(fmt: &ElementFormat, k: usize, rng: &mut ChaCha8Rng) -> MxBlock {
    let width = fmt.width();
    let codes = (0..k)
        .map(|_| loop {
            let c = rng.gen_range(0..(1u16 << width));
            let v = fmt.decode_f64(c);
            if v.is_finite() {
                break c;
            }
        })
        .collect();
    let scale = ScaleE8M0::from_exponent(rng.gen_range(-60..=60));
    MxBlock::new(scale, codes)
}

/// Exact rational value of an MX block lane (finite lanes only).
pub fn lane_rational(fmt: &ElementFormat, block: &MxBlock, lane: usize) -> BigRational {
    let v = fmt.decode_f64(block.codes[lane]);
    assert!(v.is_finite());
    rat(v) * pow2(block.scale.exponent().expect("finite scale"))
}
