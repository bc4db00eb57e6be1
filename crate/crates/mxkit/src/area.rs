//! FPGA area estimation for unrolled block-scaled datapaths.
//!
//! Multiplier arrays, floating-point (normalising) adder trees and
//! normalisation circuits follow fitted linear models in instance count;
//! integer adder trees are summed exactly, adder by adder, accounting for
//! the one-bit width growth per tree level. Area units are whatever the
//! calibration was fitted in (LUTs in practice).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dot::kulisch_width;
use crate::formats::ElementFormat;
use crate::tensor::{QuantScheme, Regime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AreaError {
    #[error("no multiplier calibration for format {0}")]
    MissingCalibration(String),
    #[error("degenerate fit: need at least two distinct instance counts")]
    DegenerateFit,
    #[error("calibration line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `area = slope * n + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, n: usize) -> f64 {
        self.slope * n as f64 + self.intercept
    }
}

/// Ordinary least squares over `(n, area)` points.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearModel, AreaError> {
    if points.len() < 2 {
        return Err(AreaError::DegenerateFit);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(AreaError::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(LinearModel {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

/// Multiplier calibrations are keyed by the bare format name (the special
/// policy does not change the multiplier array).
fn bare_name(fmt: &ElementFormat) -> String {
    match *fmt {
        ElementFormat::Fp { e, m, .. } => format!("e{e}m{m}"),
        ElementFormat::Int { b } => format!("int{b}"),
    }
}

/// Calibrated per-block area coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaCalibration {
    /// Per element format: area of an `n`-multiplier array.
    pub multipliers: BTreeMap<String, LinearModel>,
    /// Area of a tree of `n` normalising adders.
    pub fp_adder_tree: LinearModel,
    /// Area of a normalisation circuit for `n` output activations.
    pub normalizer: LinearModel,
    /// Area per output bit of one integer adder.
    pub int_adder_unit_cost: f64,
}

impl AreaCalibration {
    /// Documented proxy calibration for one design point, in LUT-like
    /// units: multiplier cost grows with the square of the input width,
    /// adder-style circuits grow linearly with their datapath width
    /// (`width = b_o(fmt, k) + 3` including the GRS bits). A stand-in for
    /// user-measured synthesis data, not a reproduction of it.
    pub fn proxy(fmt: &ElementFormat, k: usize) -> Self {
        let bi = fmt.width() as f64;
        let w = crate::dot::dot_output_width(fmt, k.max(4).next_power_of_two()) as f64;
        let mut multipliers = BTreeMap::new();
        multipliers.insert(
            bare_name(fmt),
            LinearModel {
                slope: bi * bi,
                intercept: 0.0,
            },
        );
        AreaCalibration {
            multipliers,
            fp_adder_tree: LinearModel {
                slope: 6.0 * (w + 3.0),
                intercept: 0.0,
            },
            normalizer: LinearModel {
                slope: 2.0 * w,
                intercept: 0.0,
            },
            int_adder_unit_cost: 1.0,
        }
    }

    pub fn multiplier_model(&self, fmt: &ElementFormat) -> Result<&LinearModel, AreaError> {
        self.multipliers
            .get(&bare_name(fmt))
            .ok_or_else(|| AreaError::MissingCalibration(bare_name(fmt)))
    }

    /// Parse the line-oriented calibration grammar:
    /// `block_kind format slope intercept` per record, `-` for the format
    /// field of non-multiplier records, `#` comments and blank lines
    /// allowed.
    pub fn parse(text: &str) -> Result<Self, AreaError> {
        let mut multipliers = BTreeMap::new();
        let mut fp_adder_tree = None;
        let mut normalizer = None;
        let mut unit = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: &str| AreaError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if fields.len() != 4 {
                return Err(err("expected: block_kind format slope intercept"));
            }
            let slope: f64 = fields[2].parse().map_err(|_| err("bad slope"))?;
            let intercept: f64 = fields[3].parse().map_err(|_| err("bad intercept"))?;
            if !slope.is_finite() || !intercept.is_finite() || slope < 0.0 {
                return Err(err("coefficients must be finite and slope non-negative"));
            }
            let model = LinearModel { slope, intercept };
            match fields[0] {
                "multiplier" => {
                    let fmt: ElementFormat = fields[1]
                        .parse()
                        .map_err(|_| err("bad multiplier format"))?;
                    multipliers.insert(bare_name(&fmt), model);
                }
                "fp_adder_tree" => fp_adder_tree = Some(model),
                "normalizer" => normalizer = Some(model),
                "int_adder_unit" => unit = Some(slope),
                other => return Err(err(&format!("unknown block kind {other:?}"))),
            }
        }
        let missing = |what: &str| AreaError::Parse {
            line: 0,
            msg: format!("missing {what} record"),
        };
        Ok(AreaCalibration {
            multipliers,
            fp_adder_tree: fp_adder_tree.ok_or_else(|| missing("fp_adder_tree"))?,
            normalizer: normalizer.ok_or_else(|| missing("normalizer"))?,
            int_adder_unit_cost: unit.ok_or_else(|| missing("int_adder_unit"))?,
        })
    }

    /// Render in the same grammar `parse` accepts; deterministic order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, m) in &self.multipliers {
            writeln!(out, "multiplier {name} {} {}", m.slope, m.intercept).unwrap();
        }
        writeln!(
            out,
            "fp_adder_tree - {} {}",
            self.fp_adder_tree.slope, self.fp_adder_tree.intercept
        )
        .unwrap();
        writeln!(
            out,
            "normalizer - {} {}",
            self.normalizer.slope, self.normalizer.intercept
        )
        .unwrap();
        writeln!(out, "int_adder_unit - {} 0", self.int_adder_unit_cost).unwrap();
        out
    }
}

/// Exact area of a `k`-leaf integer adder tree with `b`-bit inputs:
/// level `l` holds `k / 2^l` adders of output width `b + l`, so the sum is
/// `sum_l (k / 2^l) * (b + l) * unit_cost`. `k` must be a power of two.
pub fn area_int_adder_tree(k: usize, b: u32, cal: &AreaCalibration) -> f64 {
    assert!(k.is_power_of_two() && k >= 2, "tree needs a power-of-two leaf count");
    let mut total = 0.0;
    let levels = k.trailing_zeros();
    for l in 1..=levels {
        let adders = (k >> l) as f64;
        total += adders * (b + l) as f64;
    }
    total * cal.int_adder_unit_cost
}

/// Adder-tree area for an arbitrary leaf count: pairwise levels, odd leaf
/// passing through, widths still growing one bit per level. Matches the
/// closed form on power-of-two counts.
fn area_int_adder_tree_general(n: usize, b: u32, cal: &AreaCalibration) -> f64 {
    let mut total = 0.0;
    let mut count = n;
    let mut level = 1;
    while count > 1 {
        total += (count / 2) as f64 * (b + level) as f64;
        count = count.div_ceil(2);
        level += 1;
    }
    total * cal.int_adder_unit_cost
}

/// Area of an array of `n` multipliers for the element format.
pub fn area_multiplier_array(
    n: usize,
    fmt: &ElementFormat,
    cal: &AreaCalibration,
) -> Result<f64, AreaError> {
    Ok(cal.multiplier_model(fmt)?.predict(n))
}

/// Area of a tree of `n` normalising adders.
pub fn area_fp_adder_tree(n: usize, cal: &AreaCalibration) -> f64 {
    cal.fp_adder_tree.predict(n)
}

/// Area of the normalisation circuitry for `n` output activations.
pub fn area_normalizer(n_outputs: usize, cal: &AreaCalibration) -> f64 {
    cal.normalizer.predict(n_outputs)
}

/// Shape of one linear or convolutional layer to unroll.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Conv2d {
        k_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerShape {
    /// (reduction channels, taps per channel, outputs per position)
    fn dims(&self) -> (usize, usize, usize) {
        match *self {
            LayerShape::Conv2d { k_out, c_in, kh, kw } => (c_in, kh * kw, k_out),
            LayerShape::Linear {
                in_features,
                out_features,
            } => (in_features, 1, out_features),
        }
    }
}

/// Area breakdown for one unrolled layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerArea {
    pub multiplier_count: usize,
    pub int_adder_count: usize,
    pub norm_adder_count: usize,
    pub normalizer_count: usize,
    pub multiplier_area: f64,
    pub int_adder_area: f64,
    pub norm_adder_area: f64,
    pub normalizer_area: f64,
    pub total: f64,
}

/// Whole-network unrolled estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkAreaEstimate {
    pub layers: Vec<LayerArea>,
    pub total: f64,
    /// Raised for wide-exponent FP elements (E4M3/E5M2 and up): the
    /// error-free accumulator width grows with `2^e`, which costs
    /// disproportionate area.
    pub accumulator_area_warning: bool,
}

/// Estimate the area to fully unroll the given layers under a scheme:
/// one multiplier per reduction term, exact integer adder trees inside each
/// shared-scale block, normalising adders across block boundaries, and one
/// normalisation circuit per output activation. Everything else is ignored.
pub fn estimate_network_area(
    layers: &[LayerShape],
    scheme: &QuantScheme,
    cal: &AreaCalibration,
) -> Result<NetworkAreaEstimate, AreaError> {
    let fmt = &scheme.element;
    let b_int = kulisch_width(fmt);
    let mut out_layers = Vec::with_capacity(layers.len());
    let mut total = 0.0;
    for layer in layers {
        let (c_in, taps, outputs) = layer.dims();
        let reduction = c_in * taps;
        // Per-output reduction structure under the scale-sharing regime.
        let (tree_area_per_output, int_adders_per_output, norm_adds_per_output) =
            match scheme.regime {
                Regime::PerTensor => (
                    area_int_adder_tree_general(reduction, b_int, cal),
                    reduction.saturating_sub(1),
                    0,
                ),
                Regime::PerChannel => (
                    c_in as f64 * area_int_adder_tree_general(taps, b_int, cal),
                    c_in * taps.saturating_sub(1),
                    c_in.saturating_sub(1),
                ),
                Regime::Mx { k } => {
                    let blocks = c_in.div_ceil(k) * taps;
                    (
                        blocks as f64 * area_int_adder_tree(k, b_int, cal),
                        blocks * (k - 1),
                        blocks.saturating_sub(1),
                    )
                }
            };
        let multiplier_count = outputs * reduction;
        let int_adder_count = outputs * int_adders_per_output;
        let norm_adder_count = outputs * norm_adds_per_output;
        let normalizer_count = outputs;

        let multiplier_area = area_multiplier_array(multiplier_count, fmt, cal)?;
        let int_adder_area = outputs as f64 * tree_area_per_output;
        let norm_adder_area = area_fp_adder_tree(norm_adder_count, cal);
        let normalizer_area = area_normalizer(normalizer_count, cal);
        let layer_total = multiplier_area + int_adder_area + norm_adder_area + normalizer_area;
        total += layer_total;
        out_layers.push(LayerArea {
            multiplier_count,
            int_adder_count,
            norm_adder_count,
            normalizer_count,
            multiplier_area,
            int_adder_area,
            norm_adder_area,
            normalizer_area,
            total: layer_total,
        });
    }
    let warn = matches!(fmt, ElementFormat::Fp { e, .. } if *e >= 4);
    Ok(NetworkAreaEstimate {
        layers: out_layers,
        total,
        accumulator_area_warning: warn,
    })
}
