//! Symmetric linear quantization of FP32 weight tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packed::signed_range;
use crate::rounding::{self, RoundingStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl FloatTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub bits: u8,
    pub data: Vec<i32>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, bits: u8, data: Vec<i32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if !(1..=crate::packed::MAX_BITS).contains(&bits) {
            return Err(Error::InvalidBitwidth(bits));
        }
        let (lo, hi) = signed_range(bits);
        if let Some(i) = data.iter().position(|&v| (v as i64) < lo || (v as i64) > hi) {
            return Err(Error::OutOfRange {
                index: i,
                value: data[i] as i64,
                bits,
            });
        }
        Ok(Self { shape, bits, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub(crate) fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Scale granularity. Per-tensor is what the container stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Granularity {
    #[default]
    PerTensor,
    /// One scale per index of axis 0.
    PerChannel,
}

/// Integer weights plus their dequantization scale(s).
///
/// `scales` holds one entry for per-tensor quantization, or `shape[0]`
/// entries for per-output-channel quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub ints: IntTensor,
    pub scales: Vec<f32>,
}

impl QuantizedTensor {
    pub fn per_tensor(ints: IntTensor, scale: f32) -> Self {
        Self {
            ints,
            scales: vec![scale],
        }
    }

    pub fn granularity(&self) -> Granularity {
        if self.scales.len() == 1 {
            Granularity::PerTensor
        } else {
            Granularity::PerChannel
        }
    }

    /// Scale applying to flat element `i`.
    pub fn scale_at(&self, i: usize) -> f32 {
        if self.scales.len() == 1 {
            self.scales[0]
        } else {
            let per_row = self.ints.len() / self.scales.len();
            self.scales[i / per_row]
        }
    }
}

fn level_max(bits: u8) -> f32 {
    ((1i32 << (bits - 1)) - 1) as f32
}

fn check_quant_bits(bits: u8) -> Result<()> {
    if (2..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBitwidth(bits))
    }
}

/// Min-max scale: `max|w| / (2^(n-1) - 1)`, or 1 for an all-zero tensor.
pub fn compute_scale(w: &FloatTensor, bits: u8) -> Result<f32> {
    check_quant_bits(bits)?;
    if w.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if let Some(i) = w.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(scale_for(w.max_abs(), bits))
}

fn scale_for(max_abs: f32, bits: u8) -> f32 {
    if max_abs == 0.0 {
        1.0
    } else {
        max_abs / level_max(bits)
    }
}

/// One min-max scale per index of axis 0.
pub fn compute_channel_scales(w: &FloatTensor, bits: u8) -> Result<Vec<f32>> {
    check_quant_bits(bits)?;
    if w.is_empty() || w.shape.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if let Some(i) = w.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let rows = w.shape[0];
    let per_row = w.len() / rows;
    Ok(w.data
        .chunks(per_row)
        .map(|row| scale_for(row.iter().fold(0.0f32, |m, v| m.max(v.abs())), bits))
        .collect())
}

/// Round-to-nearest (ties away from zero) then clip to the signed `bits` range.
pub fn quantize(w: &FloatTensor, scale: f32, bits: u8) -> Result<IntTensor> {
    quantize_with(w, &[scale], bits, RoundingStrategy::Rtn)
}

/// Quantizes `w / scale` with the given rounding strategy, then clips.
///
/// `scales` is either a single per-tensor scale or one per axis-0 index.
pub fn quantize_with(
    w: &FloatTensor,
    scales: &[f32],
    bits: u8,
    strategy: RoundingStrategy,
) -> Result<IntTensor> {
    check_quant_bits(bits)?;
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidModel(format!("scale must be positive, got {scales:?}")));
    }
    let per_row = if scales.len() == 1 {
        w.len().max(1)
    } else {
        if w.shape.first() != Some(&scales.len()) {
            return Err(Error::ShapeMismatch {
                shape: w.shape.clone(),
                expected: w.shape.first().copied().unwrap_or(0),
                actual: scales.len(),
            });
        }
        w.len() / scales.len()
    };
    let scaled: Vec<f64> = w
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v as f64 / scales[i / per_row] as f64)
        .collect();
    let rounded = rounding::round_tensor(&scaled, &w.shape, strategy)?;
    let (lo, hi) = signed_range(bits);
    let data = rounded.into_iter().map(|v| v.clamp(lo, hi) as i32).collect();
    Ok(IntTensor {
        shape: w.shape.clone(),
        bits,
        data,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> FloatTensor {
    let data = q
        .ints
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| q.scale_at(i) * v as f32)
        .collect();
    FloatTensor {
        shape: q.ints.shape.clone(),
        data,
    }
}

/// `w / s - w_int`, the rounding perturbation in integer units.
pub fn perturbation(w: &FloatTensor, q: &QuantizedTensor) -> Result<FloatTensor> {
    if w.shape != q.ints.shape {
        return Err(Error::ShapeMismatch {
            shape: w.shape.clone(),
            expected: w.len(),
            actual: q.ints.len(),
        });
    }
    let data = w
        .data
        .iter()
        .zip(&q.ints.data)
        .enumerate()
        .map(|(i, (&v, &n))| (v as f64 / q.scale_at(i) as f64 - n as f64) as f32)
        .collect();
    Ok(FloatTensor {
        shape: w.shape.clone(),
        data,
    })
}

/// Per-tensor min-max quantization in one call.
pub fn quantize_tensor(
    w: &FloatTensor,
    bits: u8,
    strategy: RoundingStrategy,
    granularity: Granularity,
) -> Result<QuantizedTensor> {
    let scales = match granularity {
        Granularity::PerTensor => vec![compute_scale(w, bits)?],
        Granularity::PerChannel => compute_channel_scales(w, bits)?,
    };
    let ints = quantize_with(w, &scales, bits, strategy)?;
    Ok(QuantizedTensor { ints, scales })
}
