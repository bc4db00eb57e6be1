//! 2D convolutions: a plain binary64 reference and the block-decomposed
//! forms that mirror the hardware datapaths (exact Kulisch sums inside a
//! shared-scale boundary, normalising adders across boundaries).
//!
//! Shapes follow the quantizer layouts: activations `N x H x W x C`,
//! weights `K x C x H' x W'`, valid padding, stride 1. The reduction order
//! across boundaries is the same fixed pairwise tree the `DotGeneral`
//! reduction uses, flattened over `(c-block, h', w')`.

use super::{QuantizedTensor, Regime, Tensor, TensorError};
use crate::dot::{kulisch_lsb_exp, sum_products};
use crate::dot_general::{norm_add, NormAddConfig, NormOperand};
use crate::dyadic::round_dyadic_to_f32;
use crate::formats::ElementFormat;

struct ConvShape {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k_out: usize,
    r: usize,
    s: usize,
    h_out: usize,
    w_out: usize,
}

fn conv_shape(a_dims: &[usize], f_dims: &[usize]) -> Result<ConvShape, TensorError> {
    if a_dims.len() != 4 || f_dims.len() != 4 {
        return Err(TensorError::ShapeMismatch(format!(
            "expected rank-4 activations and weights, got {a_dims:?} and {f_dims:?}"
        )));
    }
    let (n, h, w, c) = (a_dims[0], a_dims[1], a_dims[2], a_dims[3]);
    let (k_out, fc, r, s) = (f_dims[0], f_dims[1], f_dims[2], f_dims[3]);
    if a_dims.iter().chain(f_dims).any(|&d| d == 0) {
        return Err(TensorError::ShapeMismatch("zero-sized dimension".into()));
    }
    if fc != c {
        return Err(TensorError::ShapeMismatch(format!(
            "activation channels {c} vs weight channels {fc}"
        )));
    }
    if r > h || s > w {
        return Err(TensorError::ShapeMismatch(format!(
            "kernel {r}x{s} larger than input {h}x{w}"
        )));
    }
    Ok(ConvShape {
        n,
        h,
        w,
        c,
        k_out,
        r,
        s,
        h_out: h - r + 1,
        w_out: w - s + 1,
    })
}

/// Direct-summation convolution: binary64 intermediates accumulated in
/// `(c, h', w')` order, rounded once to binary32 per output.
pub fn conv2d_reference(a: &Tensor, f: &Tensor) -> Result<Tensor, TensorError> {
    let sh = conv_shape(a.dims(), f.dims())?;
    let ad = a.data();
    let fd = f.data();
    let mut out = Tensor::zeros(vec![sh.n, sh.h_out, sh.w_out, sh.k_out]);
    let mut o = 0;
    for n in 0..sh.n {
        for y in 0..sh.h_out {
            for x in 0..sh.w_out {
                for l in 0..sh.k_out {
                    let mut acc = 0.0f64;
                    for c in 0..sh.c {
                        for r in 0..sh.r {
                            for s in 0..sh.s {
                                let ai = ((n * sh.h + y + r) * sh.w + x + s) * sh.c + c;
                                let fi = ((l * sh.c + c) * sh.r + r) * sh.s + s;
                                acc += ad[ai] as f64 * fd[fi] as f64;
                            }
                        }
                    }
                    out.data_mut()[o] = acc as f32;
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

fn check_same_scheme(
    a: &QuantizedTensor,
    f: &QuantizedTensor,
    want: &str,
) -> Result<ElementFormat, TensorError> {
    if a.scheme().element != f.scheme().element {
        return Err(TensorError::SchemeMismatch(format!(
            "element formats differ: {} vs {}",
            a.scheme().element,
            f.scheme().element
        )));
    }
    if a.scheme().regime != f.scheme().regime {
        return Err(TensorError::SchemeMismatch(format!(
            "regimes differ (need {want} on both operands)"
        )));
    }
    if a.c_axis() != 3 || f.c_axis() != 1 {
        return Err(TensorError::SchemeMismatch(
            "activations must share scales along axis 3, weights along axis 1".into(),
        ));
    }
    Ok(a.scheme().element)
}

/// Collapse flags plus a reduced operand into the output value.
fn finish_output(value: &NormOperand, nan: bool, pos_inf: bool, neg_inf: bool) -> f32 {
    if nan || (pos_inf && neg_inf) {
        f32::NAN
    } else if pos_inf {
        f32::INFINITY
    } else if neg_inf {
        f32::NEG_INFINITY
    } else {
        round_dyadic_to_f32(&value.mantissa, value.exponent)
    }
}

/// Convolution over MX-quantized operands (Eq-7 style decomposition): the
/// sum over each block of `k` channels is an exact Kulisch dot, the
/// per-block `(s t)` scale is applied as an exponent offset, and the
/// partial results are combined by normalising adders across every
/// `(c-block, h', w')` boundary.
///
/// With a sufficiently wide adder config the result is bit-identical to
/// `conv2d_reference` on the dequantized operands.
pub fn conv2d_mx(
    a_q: &QuantizedTensor,
    f_q: &QuantizedTensor,
    cfg: &NormAddConfig,
) -> Result<Tensor, TensorError> {
    let el = check_same_scheme(a_q, f_q, "MX")?;
    let Regime::Mx { k } = a_q.scheme().regime else {
        return Err(TensorError::SchemeMismatch(
            "conv2d_mx needs MX-quantized operands".into(),
        ));
    };
    let sh = conv_shape(a_q.dims(), f_q.dims())?;
    let lsb = kulisch_lsb_exp(&el);
    let nblocks = sh.c.div_ceil(k);

    let mut out = Tensor::zeros(vec![sh.n, sh.h_out, sh.w_out, sh.k_out]);
    let mut a_buf = vec![0u16; k];
    let mut f_buf = vec![0u16; k];
    let mut o = 0;
    for n in 0..sh.n {
        for y in 0..sh.h_out {
            for x in 0..sh.w_out {
                for l in 0..sh.k_out {
                    let mut nan = false;
                    let mut pos_inf = false;
                    let mut neg_inf = false;
                    let mut leaves = Vec::with_capacity(nblocks * sh.r * sh.s);
                    for cb in 0..nblocks {
                        let c0 = cb * k;
                        let lanes = k.min(sh.c - c0);
                        for r in 0..sh.r {
                            for s in 0..sh.s {
                                let a_base = ((n * sh.h + y + r) * sh.w + x + s) * sh.c + c0;
                                a_buf[..lanes]
                                    .copy_from_slice(&a_q.codes()[a_base..a_base + lanes]);
                                a_buf[lanes..].fill(0);
                                for p in 0..lanes {
                                    f_buf[p] =
                                        f_q.codes()[((l * sh.c + c0 + p) * sh.r + r) * sh.s + s];
                                }
                                f_buf[lanes..].fill(0);
                                let sa = a_q.scales()[a_base];
                                let sb = f_q.scales()[((l * sh.c + c0) * sh.r + r) * sh.s + s];
                                let cs = sa.mul(sb);
                                let Some(se) = cs.exponent() else {
                                    nan = true;
                                    leaves.push(NormOperand::zero());
                                    continue;
                                };
                                let sum = sum_products(&el, &a_buf, &f_buf);
                                nan |= sum.nan;
                                pos_inf |= sum.pos_inf;
                                neg_inf |= sum.neg_inf;
                                leaves.push(
                                    NormOperand::new(sum.raw, lsb + se).normalize(cfg),
                                );
                            }
                        }
                    }
                    let value = crate::dot::pairwise_tree(leaves, |p, q| norm_add(&p, &q, cfg));
                    out.data_mut()[o] = finish_output(&value, nan, pos_inf, neg_inf);
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Convolution over per-channel-quantized operands (Eq-6 style): scales
/// factor out of the spatial sums, which stay exact; the per-channel
/// results cross scale boundaries through normalising adders.
pub fn conv2d_per_channel(
    a_q: &QuantizedTensor,
    f_q: &QuantizedTensor,
    cfg: &NormAddConfig,
) -> Result<Tensor, TensorError> {
    let el = check_same_scheme(a_q, f_q, "per-channel")?;
    if a_q.scheme().regime != Regime::PerChannel {
        return Err(TensorError::SchemeMismatch(
            "conv2d_per_channel needs per-channel-quantized operands".into(),
        ));
    }
    let sh = conv_shape(a_q.dims(), f_q.dims())?;
    let lsb = kulisch_lsb_exp(&el);

    let mut out = Tensor::zeros(vec![sh.n, sh.h_out, sh.w_out, sh.k_out]);
    let taps = sh.r * sh.s;
    let mut a_buf = vec![0u16; taps];
    let mut o = 0;
    for n in 0..sh.n {
        for y in 0..sh.h_out {
            for x in 0..sh.w_out {
                for l in 0..sh.k_out {
                    let mut nan = false;
                    let mut pos_inf = false;
                    let mut neg_inf = false;
                    let mut leaves = Vec::with_capacity(sh.c);
                    for c in 0..sh.c {
                        for r in 0..sh.r {
                            for s in 0..sh.s {
                                a_buf[r * sh.s + s] =
                                    a_q.codes()[((n * sh.h + y + r) * sh.w + x + s) * sh.c + c];
                            }
                        }
                        let f_base = (l * sh.c + c) * taps;
                        let f_lanes = &f_q.codes()[f_base..f_base + taps];
                        let t_c = a_q.scales()[((n * sh.h + y) * sh.w + x) * sh.c + c];
                        let s_c = f_q.scales()[f_base];
                        let cs = t_c.mul(s_c);
                        let Some(se) = cs.exponent() else {
                            nan = true;
                            leaves.push(NormOperand::zero());
                            continue;
                        };
                        let sum = sum_products(&el, &a_buf, f_lanes);
                        nan |= sum.nan;
                        pos_inf |= sum.pos_inf;
                        neg_inf |= sum.neg_inf;
                        leaves.push(NormOperand::new(sum.raw, lsb + se).normalize(cfg));
                    }
                    let value = crate::dot::pairwise_tree(leaves, |p, q| norm_add(&p, &q, cfg));
                    out.data_mut()[o] = finish_output(&value, nan, pos_inf, neg_inf);
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}
