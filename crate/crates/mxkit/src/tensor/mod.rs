//! Tensor-level quantization simulation: scale-sharing regimes, principal
//! dimension reshape/padding, quantize-dequantize, reference and decomposed
//! convolutions, and error metrics.
//!
//! Activations are laid out `N x H x W x C` and weights `K x C x H' x W'`,
//! row-major. The input-channel dimension `C` is the principal dimension:
//! per-channel scales vary only along it, and MX blocks subdivide it into
//! groups of `k`.

mod conv;
mod io;

pub use conv::{conv2d_mx, conv2d_per_channel, conv2d_reference};
pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, TensorIoError};

use thiserror::Error;

use crate::convert::{decode_scaled, quantize_group};
use crate::formats::{BlockFormat, ElementFormat, FormatError, ScaleE8M0};
use crate::scale::ScaleRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),
    #[error("data length {got} does not match dims product {want}")]
    DataLength { got: usize, want: usize },
    #[error("principal axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Dense tensor of binary32 data, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(TensorError::DataLength {
                got: data.len(),
                want,
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.dims[i + 1];
        }
        s
    }
}

/// Scale-sharing regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// One scale for the whole tensor.
    PerTensor,
    /// One scale per input-channel index, shared across every other
    /// dimension.
    PerChannel,
    /// One scale per contiguous group of `k` along the principal dimension,
    /// private to each position in the other dimensions.
    Mx { k: usize },
}

/// A full quantization scheme: regime, element format and scale rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantScheme {
    pub regime: Regime,
    pub element: ElementFormat,
    pub scale_rule: ScaleRule,
}

impl QuantScheme {
    pub fn new(regime: Regime, element: ElementFormat, scale_rule: ScaleRule) -> Result<Self, FormatError> {
        element.validate()?;
        if let Regime::Mx { k } = regime {
            BlockFormat::new(element, k)?;
        }
        Ok(QuantScheme {
            regime,
            element,
            scale_rule,
        })
    }
}

/// A quantized tensor: element codes at the original logical shape, plus an
/// expanded scale tensor of the same shape (every lane carries its shared
/// scale, repeated).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    dims: Vec<usize>,
    codes: Vec<u16>,
    scales: Vec<ScaleE8M0>,
    scheme: QuantScheme,
    c_axis: usize,
}

impl QuantizedTensor {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn scales(&self) -> &[ScaleE8M0] {
        &self.scales
    }

    pub fn scheme(&self) -> &QuantScheme {
        &self.scheme
    }

    pub fn c_axis(&self) -> usize {
        self.c_axis
    }

    /// One scale per sharing group, in group order, with the repeats
    /// removed (the deployment-friendly compact form).
    pub fn compact_scales(&self) -> Vec<ScaleE8M0> {
        let grouping = Grouping::new(&self.dims, self.c_axis, &self.scheme.regime);
        let mut out = vec![ScaleE8M0::ONE; grouping.group_count()];
        let mut seen = vec![false; grouping.group_count()];
        for i in 0..self.scales.len() {
            let g = grouping.group_of(i);
            if !seen[g] {
                seen[g] = true;
                out[g] = self.scales[i];
            }
        }
        out
    }

    /// Check the scale-sharing restriction: within every group all expanded
    /// scale entries are equal.
    pub fn scales_consistent(&self) -> bool {
        let grouping = Grouping::new(&self.dims, self.c_axis, &self.scheme.regime);
        let compact = self.compact_scales();
        self.scales
            .iter()
            .enumerate()
            .all(|(i, s)| *s == compact[grouping.group_of(i)])
    }
}

/// Maps linear indices to scale-sharing group ids for a regime.
pub(crate) struct Grouping {
    c_stride: usize,
    c_len: usize,
    regime: Regime,
    groups: usize,
}

impl Grouping {
    pub(crate) fn new(dims: &[usize], c_axis: usize, regime: &Regime) -> Self {
        let mut c_stride = 1;
        for d in &dims[c_axis + 1..] {
            c_stride *= d;
        }
        let c_len = dims[c_axis];
        let total: usize = dims.iter().product();
        let groups = match regime {
            Regime::PerTensor => 1,
            Regime::PerChannel => c_len,
            Regime::Mx { k } => total / c_len * c_len.div_ceil(*k),
        };
        Grouping {
            c_stride,
            c_len,
            regime: *regime,
            groups,
        }
    }

    pub(crate) fn group_count(&self) -> usize {
        self.groups
    }

    /// Group id of a linear (row-major) index.
    pub(crate) fn group_of(&self, idx: usize) -> usize {
        match self.regime {
            Regime::PerTensor => 0,
            Regime::PerChannel => (idx / self.c_stride) % self.c_len,
            Regime::Mx { k } => {
                let c = (idx / self.c_stride) % self.c_len;
                let outer = idx / (self.c_stride * self.c_len);
                let inner = idx % self.c_stride;
                let nblocks = self.c_len.div_ceil(k);
                (outer * nblocks + c / k) * self.c_stride + inner
            }
        }
    }
}

/// Split the principal dimension into `ceil(C/k)` blocks of `k`, padding
/// with zeros so it divides evenly. The block-lane dimension becomes the
/// innermost (last) dimension.
pub fn reshape_pad_principal(t: &Tensor, c_axis: usize, k: usize) -> Result<Tensor, TensorError> {
    let rank = t.dims().len();
    if c_axis >= rank {
        return Err(TensorError::Axis { axis: c_axis, rank });
    }
    let c = t.dims()[c_axis];
    let nblocks = c.div_ceil(k);
    let mut dims: Vec<usize> = t.dims().to_vec();
    dims[c_axis] = nblocks;
    dims.push(k);

    let in_strides = t.strides();
    let mut out = Tensor::zeros(dims);
    let out_strides = out.strides();
    for (i, &v) in t.data().iter().enumerate() {
        // Rebuild the output index coordinate-wise; the channel coordinate
        // splits into (block, lane).
        let mut rem = i;
        let mut o = 0;
        for (axis, &stride) in in_strides.iter().enumerate() {
            let coord = rem / stride;
            rem %= stride;
            if axis == c_axis {
                o += (coord / k) * out_strides[c_axis];
                o += (coord % k) * out_strides[rank];
            } else {
                o += coord * out_strides[axis];
            }
        }
        out.data_mut()[o] = v;
    }
    Ok(out)
}

/// Inverse of [`reshape_pad_principal`]: merge the trailing block-lane
/// dimension back into the principal dimension, dropping the zero padding.
pub fn reshape_unpad_principal(
    t: &Tensor,
    c_axis: usize,
    original_c: usize,
) -> Result<Tensor, TensorError> {
    let rank = t.dims().len();
    if rank < 2 || c_axis >= rank - 1 {
        return Err(TensorError::Axis { axis: c_axis, rank });
    }
    let k = t.dims()[rank - 1];
    let nblocks = t.dims()[c_axis];
    if nblocks * k < original_c {
        return Err(TensorError::ShapeMismatch(format!(
            "{nblocks} blocks of {k} cannot hold {original_c} channels"
        )));
    }
    let mut dims: Vec<usize> = t.dims()[..rank - 1].to_vec();
    dims[c_axis] = original_c;
    let out_strides = {
        let mut s = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * dims[i + 1];
        }
        s
    };
    let in_strides = t.strides();
    let mut data = vec![0.0f32; dims.iter().product()];
    for (o, slot) in data.iter_mut().enumerate() {
        let mut rem = o;
        let mut i = 0;
        for (axis, &stride) in out_strides.iter().enumerate() {
            let coord = rem / stride;
            rem %= stride;
            if axis == c_axis {
                i += (coord / k) * in_strides[c_axis];
                i += (coord % k) * in_strides[rank - 1];
            } else {
                i += coord * in_strides[axis];
            }
        }
        *slot = t.data()[i];
    }
    Tensor::new(dims, data)
}

/// Quantize a tensor under a scheme. `c_axis` designates the principal
/// (input-channel) dimension: 3 for `NxHxWxC` activations, 1 for
/// `KxCxH'xW'` weights.
pub fn quantize_tensor(
    t: &Tensor,
    scheme: &QuantScheme,
    c_axis: usize,
) -> Result<QuantizedTensor, TensorError> {
    let rank = t.dims().len();
    if c_axis >= rank {
        return Err(TensorError::Axis { axis: c_axis, rank });
    }
    scheme.element.validate()?;
    if let Regime::Mx { k } = scheme.regime {
        BlockFormat::new(scheme.element, k)?;
    }
    let grouping = Grouping::new(t.dims(), c_axis, &scheme.regime);
    let n = t.len();

    // Bucket lane indices per group; linear order keeps lanes in ascending
    // channel order inside each group.
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); grouping.group_count()];
    for i in 0..n {
        members[grouping.group_of(i)].push(i as u32);
    }

    let mut codes = vec![0u16; n];
    let mut scales = vec![ScaleE8M0::ONE; n];
    let mut values: Vec<f32> = Vec::new();
    for group in &members {
        if group.is_empty() {
            continue;
        }
        values.clear();
        values.extend(group.iter().map(|&i| t.data()[i as usize]));
        // Padding lanes are exact zeros; they carry no statistics so the
        // stored lanes alone determine the scale.
        let block = quantize_group(&values, &scheme.element, &scheme.scale_rule);
        for (lane, &i) in group.iter().enumerate() {
            codes[i as usize] = block.codes[lane];
            scales[i as usize] = block.scale;
        }
    }
    Ok(QuantizedTensor {
        dims: t.dims().to_vec(),
        codes,
        scales,
        scheme: *scheme,
        c_axis,
    })
}

/// Expand a quantized tensor back to binary32: elementwise scale times
/// element value, exact per lane.
pub fn dequantize_tensor(q: &QuantizedTensor) -> Tensor {
    let el = &q.scheme.element;
    let data = q
        .codes
        .iter()
        .zip(&q.scales)
        .map(|(&code, scale)| match scale.exponent() {
            None => f32::NAN,
            Some(se) => decode_scaled(el, code, se),
        })
        .collect();
    Tensor::new(q.dims.clone(), data).expect("shape preserved")
}

/// Error metrics between a reference and a test tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub max_abs: f64,
    /// `10 log10(sum ref^2 / sum (ref-test)^2)`; +inf when the error is zero.
    pub sqnr_db: f64,
}

pub fn error_metrics(reference: &Tensor, test: &Tensor) -> Result<ErrorMetrics, TensorError> {
    if reference.dims() != test.dims() {
        return Err(TensorError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            reference.dims(),
            test.dims()
        )));
    }
    let mut sum_sq = 0.0f64;
    let mut err_sq = 0.0f64;
    let mut max_abs = 0.0f64;
    for (&r, &t) in reference.data().iter().zip(test.data()) {
        let d = r as f64 - t as f64;
        sum_sq += (r as f64) * (r as f64);
        err_sq += d * d;
        max_abs = max_abs.max(d.abs());
    }
    let n = reference.len().max(1) as f64;
    let sqnr_db = if err_sq == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sum_sq / err_sq).log10()
    };
    Ok(ErrorMetrics {
        mse: err_sq / n,
        max_abs,
        sqnr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{E2M1, INT8};

    fn scheme(regime: Regime, el: ElementFormat) -> QuantScheme {
        QuantScheme::new(regime, el, ScaleRule::MaxPow2).unwrap()
    }

    #[test]
    fn reshape_pad_counts() {
        let t = Tensor::zeros(vec![1, 1, 1, 40]);
        let r = reshape_pad_principal(&t, 3, 32).unwrap();
        assert_eq!(r.dims(), &[1, 1, 1, 2, 32]);
        let t = Tensor::zeros(vec![1, 1, 1, 32]);
        let r = reshape_pad_principal(&t, 3, 32).unwrap();
        assert_eq!(r.dims(), &[1, 1, 1, 1, 32]);
    }

    #[test]
    fn reshape_roundtrip_weights() {
        // K x C x H' x W' with C on axis 1
        let dims = vec![2, 5, 3, 3];
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| i as f32 * 0.25 - 7.0).collect();
        let t = Tensor::new(dims, data).unwrap();
        let r = reshape_pad_principal(&t, 1, 4).unwrap();
        assert_eq!(r.dims(), &[2, 2, 3, 3, 4]);
        let back = reshape_unpad_principal(&r, 1, 5).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn constant_tensor_mxint8() {
        let t = Tensor::new(vec![1, 1, 1, 8], vec![1.0; 8]).unwrap();
        let q = quantize_tensor(&t, &scheme(Regime::Mx { k: 4 }, INT8), 3).unwrap();
        assert!(q.scales.iter().all(|s| s.byte() == 127));
        assert!(q.codes.iter().all(|&c| c == 64));
        assert_eq!(dequantize_tensor(&q), t);
    }

    #[test]
    fn per_tensor_identity_when_in_format() {
        let vals = vec![0.5f32, -1.5, 6.0, 0.0, 3.0, -0.5, 2.0, 1.0];
        let t = Tensor::new(vec![8], vals.clone()).unwrap();
        let q = quantize_tensor(
            &t,
            &QuantScheme::new(
                Regime::PerTensor,
                E2M1,
                ScaleRule::Fixed(ScaleE8M0::ONE),
            )
            .unwrap(),
            0,
        )
        .unwrap();
        assert_eq!(dequantize_tensor(&q).data(), &vals[..]);
    }

    #[test]
    fn mx_blocks_get_distinct_scales() {
        let t = Tensor::new(
            vec![1, 1, 1, 8],
            vec![1.0, 1.0, 1.0, 1.0, 64.0, 64.0, 64.0, 64.0],
        )
        .unwrap();
        let q = quantize_tensor(&t, &scheme(Regime::Mx { k: 4 }, E2M1), 3).unwrap();
        let compact = q.compact_scales();
        assert_eq!(compact.len(), 2);
        assert_eq!(compact[0].exponent(), Some(-2));
        assert_eq!(compact[1].exponent(), Some(4));
        assert!(q.scales_consistent());
    }

    #[test]
    fn per_channel_shares_across_batch_and_space() {
        // N x H x W x C with C = 3: scale for channel c comes from the max
        // over every (n, h, w).
        let mut t = Tensor::zeros(vec![2, 2, 1, 3]);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = (i % 3) as f32 + 0.5;
        }
        t.data_mut()[3] = 16.0; // channel 0 outlier elsewhere in the batch
        let q = quantize_tensor(&t, &scheme(Regime::PerChannel, INT8), 3).unwrap();
        let compact = q.compact_scales();
        assert_eq!(compact.len(), 3);
        assert_eq!(compact[0].exponent(), Some(4)); // max 16 -> 2^4
        assert!(q.scales_consistent());
    }

    #[test]
    fn nan_block_dequantizes_to_nan() {
        let t = Tensor::new(vec![1, 1, 1, 4], vec![f32::NAN, 1.0, 2.0, 3.0]).unwrap();
        let q = quantize_tensor(&t, &scheme(Regime::Mx { k: 4 }, E2M1), 3).unwrap();
        let d = dequantize_tensor(&q);
        assert!(d.data().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn metrics_examples() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let m = error_metrics(&a, &a).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.sqnr_db, f64::INFINITY);
        let b = Tensor::new(vec![1], vec![1.0]).unwrap();
        let z = Tensor::new(vec![1], vec![0.0]).unwrap();
        let m = error_metrics(&b, &z).unwrap();
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.max_abs, 1.0);
        assert_eq!(m.sqnr_db, 0.0);
        assert!(error_metrics(&a, &b).is_err());
    }

    #[test]
    fn mx_with_block_equal_to_c_matches_per_channel_on_pow2_constants() {
        // Each channel constant and a power of two: MX(k=C) on a weights
        // layout degenerates to one block per (l, h', w') holding the whole
        // channel range; with per-channel-constant pow2 inputs both regimes
        // quantize exactly.
        let dims = vec![1, 4, 1, 1];
        let data = vec![0.5f32, 1.0, 2.0, 4.0];
        let t = Tensor::new(dims, data).unwrap();
        let qmx = quantize_tensor(&t, &scheme(Regime::Mx { k: 4 }, INT8), 1).unwrap();
        let qpc = quantize_tensor(&t, &scheme(Regime::PerChannel, INT8), 1).unwrap();
        assert_eq!(dequantize_tensor(&qmx), dequantize_tensor(&qpc));
    }
}
