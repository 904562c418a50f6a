//! Integer weight decomposition.
//!
//! An `n`-bit weight `w` is split into an `h`-bit high part and a low residual
//! with `w = high * 2^l + low`, `l = n - h`. The high part is a rounding of
//! `w / 2^l`; stored on its own with the inflated scale `s * 2^l` it forms the
//! part-bit model. The residual is kept with one extra bit, `[-2^l, 2^l - 1]`,
//! which is always wide enough to make recomposition exact.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packed::{signed_range, PackedTensor};
use crate::quantizer::{self, FloatTensor, IntTensor};
use crate::rounding::{self, RoundingStrategy};
use crate::store::{FloatModel, Manifest, NestedModel};

/// Checks `2 <= h < n <= 8`.
pub fn check_split(n: u8, h: u8) -> Result<()> {
    if h >= 1 && h < n && n <= 8 {
        Ok(())
    } else {
        Err(Error::InvalidCombination { n, h })
    }
}

/// The nested combinations the pipeline builds: `INT(8|3..7)` and `INT(6|3..5)`.
pub fn check_combination(n: u8, h: u8) -> Result<()> {
    if (n == 8 || n == 6) && (3..n).contains(&h) {
        Ok(())
    } else {
        Err(Error::InvalidCombination { n, h })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub high: IntTensor,
    pub low: IntTensor,
    /// Residuals that had to be clipped. Always 0 with compensation.
    pub clipped: usize,
}

/// Splits `w_int` into `(high, low)` for nested bitwidth `h`.
///
/// With `compensate` the residual is stored in `l + 1` bits and never
/// clipped. Without it the residual is clipped to `l` bits, which can lose
/// information whenever rounding moved `high` away from the plain shift.
pub fn decompose(
    w_int: &IntTensor,
    h: u8,
    strategy: RoundingStrategy,
    compensate: bool,
) -> Result<Decomposition> {
    let n = w_int.bits;
    check_split(n, h)?;
    let l = (n - h) as u32;

    let raw_high: Vec<i64> = match strategy {
        RoundingStrategy::Adaptive { group_axis } => {
            // exact: small integers divided by a power of two
            let scaled: Vec<f64> = w_int
                .data
                .iter()
                .map(|&v| v as f64 / (1u64 << l) as f64)
                .collect();
            rounding::adaptive_round(&scaled, &w_int.shape, group_axis)?
        }
        s => w_int
            .data
            .iter()
            .map(|&v| s.round_shifted(v as i64, l))
            .collect::<Result<_>>()?,
    };

    let (hlo, hhi) = signed_range(h);
    let (llo, lhi) = if compensate {
        signed_range(l as u8 + 1)
    } else {
        signed_range(l as u8)
    };
    let mut clipped = 0;
    let mut high = Vec::with_capacity(w_int.len());
    let mut low = Vec::with_capacity(w_int.len());
    for (&w, &r) in w_int.data.iter().zip(&raw_high) {
        let hi = r.clamp(hlo, hhi);
        let residual = w as i64 - (hi << l);
        let lo = residual.clamp(llo, lhi);
        if lo != residual {
            clipped += 1;
        }
        high.push(hi as i32);
        low.push(lo as i32);
    }
    if compensate && clipped > 0 {
        // unreachable for valid n-bit input; kept as a hard check
        return Err(Error::Corruption {
            index: 0,
            value: clipped as i64,
            bits: l as u8 + 1,
        });
    }
    Ok(Decomposition {
        high: IntTensor {
            shape: w_int.shape.clone(),
            bits: h,
            data: high,
        },
        low: IntTensor {
            shape: w_int.shape.clone(),
            bits: if compensate { l as u8 + 1 } else { l as u8 },
            data: low,
        },
        clipped,
    })
}

/// `high * 2^l + low`, checked against the `n`-bit range.
pub fn recompose(high: &IntTensor, low: &IntTensor, l: u32, n: u8) -> Result<IntTensor> {
    if high.shape != low.shape {
        return Err(Error::ShapeMismatch {
            shape: high.shape.clone(),
            expected: high.len(),
            actual: low.len(),
        });
    }
    let (lo, hi) = signed_range(n);
    let data = high
        .data
        .iter()
        .zip(&low.data)
        .enumerate()
        .map(|(i, (&a, &b))| {
            let v = ((a as i64) << l) + b as i64;
            if v < lo || v > hi {
                Err(Error::Corruption {
                    index: i,
                    value: v,
                    bits: n,
                })
            } else {
                Ok(v as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntTensor {
        shape: high.shape.clone(),
        bits: n,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCensus {
    pub strategy: RoundingStrategy,
    pub n: u8,
    pub h: u8,
    pub compensated: bool,
    pub nonzero_count: u32,
    pub error_min: i64,
    pub error_max: i64,
    /// error value -> occurrences
    pub histogram: BTreeMap<i64, u32>,
}

impl ErrorCensus {
    pub fn total(&self) -> u32 {
        self.histogram.values().sum()
    }
}

/// Decompose-recompose errors over every `n`-bit value, uncompensated.
pub fn error_census(n: u8, h: u8, strategy: RoundingStrategy) -> Result<ErrorCensus> {
    error_census_with(n, h, strategy, false)
}

pub fn error_census_with(
    n: u8,
    h: u8,
    strategy: RoundingStrategy,
    compensate: bool,
) -> Result<ErrorCensus> {
    if !strategy.is_scalar() {
        return Err(Error::UnsupportedStrategy(
            "the census enumerates scalars; adaptive rounding is group-based".into(),
        ));
    }
    check_split(n, h)?;
    let (lo, hi) = signed_range(n);
    let values: Vec<i32> = (lo..=hi).map(|v| v as i32).collect();
    let w = IntTensor {
        shape: vec![values.len()],
        bits: n,
        data: values,
    };
    let d = decompose(&w, h, strategy, compensate)?;
    let l = (n - h) as u32;
    let mut histogram = BTreeMap::new();
    let mut nonzero = 0;
    for ((&v, &a), &b) in w.data.iter().zip(&d.high.data).zip(&d.low.data) {
        let err = v as i64 - (((a as i64) << l) + b as i64);
        if err != 0 {
            nonzero += 1;
        }
        *histogram.entry(err).or_insert(0) += 1;
    }
    Ok(ErrorCensus {
        strategy,
        n,
        h,
        compensated: compensate,
        nonzero_count: nonzero,
        error_min: *histogram.keys().next().unwrap_or(&0),
        error_max: *histogram.keys().next_back().unwrap_or(&0),
        histogram,
    })
}

/// Critical nested bitwidth for a model of the given FP32 size.
///
/// Below 30 MB the part-bit model needs `n/2 + 1` bits, up to 300 MB `n/2`,
/// and from 300 MB on `n/2 - 1`.
pub fn advise_nested_bits(fp32_size_mb: f64, n: u8) -> Result<u8> {
    if !(fp32_size_mb > 0.0) || !fp32_size_mb.is_finite() {
        return Err(Error::InvalidModel(format!(
            "model size must be positive, got {fp32_size_mb}"
        )));
    }
    if n != 6 && n != 8 {
        return Err(Error::InvalidBitwidth(n));
    }
    let half = n / 2;
    Ok(if fp32_size_mb < 30.0 {
        half + 1
    } else if fp32_size_mb < 300.0 {
        half
    } else {
        half - 1
    })
}

/// One nested layer: packed high and compensated low weights plus the scale.
///
/// `low` is `None` only for standalone (un-nested) models where `h == n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedLayer {
    pub name: String,
    pub shape: Vec<usize>,
    pub n: u8,
    pub h: u8,
    pub scale: f32,
    pub high: PackedTensor,
    pub low: Option<PackedTensor>,
}

impl NestedLayer {
    pub fn l(&self) -> u32 {
        (self.n - self.h) as u32
    }

    /// Scale of the part-bit weights, `s * 2^l`. Exact in f32.
    pub fn scale_high(&self) -> f32 {
        self.scale * (1u32 << self.l()) as f32
    }

    pub fn param_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn high_ints(&self) -> Result<IntTensor> {
        Ok(IntTensor {
            shape: self.shape.clone(),
            bits: self.h,
            data: self.high.unpack()?,
        })
    }

    pub fn low_ints(&self) -> Result<Option<IntTensor>> {
        self.low
            .as_ref()
            .map(|p| {
                Ok(IntTensor {
                    shape: self.shape.clone(),
                    bits: p.bits(),
                    data: p.unpack()?,
                })
            })
            .transpose()
    }

    /// The full `n`-bit integer weights.
    pub fn full_ints(&self) -> Result<IntTensor> {
        let high = self.high_ints()?;
        match self.low_ints()? {
            None if self.h == self.n => Ok(IntTensor { bits: self.n, ..high }),
            None => Err(Error::LowSectionMissing),
            Some(low) => recompose(&high, &low, self.l(), self.n),
        }
    }

    pub fn full_quantized(&self) -> Result<quantizer::QuantizedTensor> {
        Ok(quantizer::QuantizedTensor::per_tensor(self.full_ints()?, self.scale))
    }

    pub fn part_quantized(&self) -> Result<quantizer::QuantizedTensor> {
        Ok(quantizer::QuantizedTensor::per_tensor(self.high_ints()?, self.scale_high()))
    }

    /// Builds a layer from `n`-bit weights, nesting an `h`-bit part.
    pub fn from_ints(
        name: &str,
        w_int: &IntTensor,
        scale: f32,
        h: u8,
        strategy: RoundingStrategy,
    ) -> Result<Self> {
        let n = w_int.bits;
        if h == n {
            return Ok(Self {
                name: name.to_string(),
                shape: w_int.shape.clone(),
                n,
                h,
                scale,
                high: PackedTensor::pack(&w_int.data, n, &w_int.shape)?,
                low: None,
            });
        }
        let d = decompose(w_int, h, strategy, true)?;
        Ok(Self {
            name: name.to_string(),
            shape: w_int.shape.clone(),
            n,
            h,
            scale,
            high: PackedTensor::pack(&d.high.data, h, &w_int.shape)?,
            low: Some(PackedTensor::pack(&d.low.data, d.low.bits, &w_int.shape)?),
        })
    }
}

/// Options for building a nested (or standalone) model from FP32 weights.
#[derive(Debug, Clone)]
pub struct NestConfig {
    pub n: u8,
    pub h: u8,
    /// Rounding of `w_int / 2^l` into the high part.
    pub strategy: RoundingStrategy,
    /// Rounding of `w / s` into the `n`-bit weights.
    pub base_rounding: RoundingStrategy,
    /// Worker threads for layer-parallel nesting; 0 or 1 runs inline.
    pub jobs: usize,
    /// Tensors of lower rank (biases, norms) stay out of the container.
    pub min_rank: usize,
}

impl NestConfig {
    pub fn new(n: u8, h: u8, strategy: RoundingStrategy) -> Self {
        Self {
            n,
            h,
            strategy,
            base_rounding: RoundingStrategy::ADAPTIVE,
            jobs: 1,
            min_rank: 2,
        }
    }

    /// A standalone `n`-bit model with no nested part.
    pub fn standalone(n: u8) -> Self {
        Self::new(n, n, RoundingStrategy::ADAPTIVE)
    }
}

/// Quantizes one FP32 tensor to `n` bits (per-tensor min-max scale).
pub fn quantize_layer(w: &FloatTensor, n: u8, base: RoundingStrategy) -> Result<(IntTensor, f32)> {
    let s = quantizer::compute_scale(w, n)?;
    let ints = quantizer::quantize_with(w, &[s], n, base)?;
    Ok((ints, s))
}

pub fn nest_layer(name: &str, w: &FloatTensor, cfg: &NestConfig) -> Result<NestedLayer> {
    let (ints, s) = quantize_layer(w, cfg.n, cfg.base_rounding)?;
    NestedLayer::from_ints(name, &ints, s, cfg.h, cfg.strategy)
}

/// Runs the layer-wise nesting pipeline over an FP32 model.
///
/// Each selected layer is quantized to `n` bits, its high part re-rounded
/// from `w_int / 2^l`, the compensated residual derived, and both packed.
pub fn nest_model(fp: &FloatModel, model_name: &str, cfg: &NestConfig) -> Result<NestedModel> {
    if cfg.h == cfg.n {
        if !(2..=8).contains(&cfg.n) {
            return Err(Error::InvalidBitwidth(cfg.n));
        }
    } else {
        check_combination(cfg.n, cfg.h)?;
    }
    let selected: Vec<&(String, FloatTensor)> = fp
        .layers
        .iter()
        .filter(|(name, t)| {
            let keep = t.shape.len() >= cfg.min_rank;
            if !keep {
                log::debug!("skipping rank-{} tensor `{name}`", t.shape.len());
            }
            keep
        })
        .collect();

    let run = |(name, w): &&(String, FloatTensor)| nest_layer(name, w, cfg).map_err(|e| e.in_layer(name));
    let layers: Vec<NestedLayer> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        pool.install(|| selected.par_iter().map(run).collect::<Result<_>>())?
    } else {
        selected.iter().map(run).collect::<Result<_>>()?
    };

    let metadata = format!(
        "strategy={};base={};layers={}",
        cfg.strategy,
        cfg.base_rounding,
        layers.len()
    );
    NestedModel::new(
        Manifest::new(model_name, cfg.n, cfg.h, layers.len() as u32, &metadata),
        layers,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: i32, n: u8) -> IntTensor {
        IntTensor::new(vec![1], n, vec![v]).unwrap()
    }

    #[test]
    fn worked_example_minus_67() {
        let w = scalar(-67, 8);
        let d = decompose(&w, 4, RoundingStrategy::BitShift, false).unwrap();
        assert_eq!((d.high.data[0], d.low.data[0]), (-5, 7));
        assert_eq!(d.clipped, 1);
        let r = recompose(&d.high, &d.low, 4, 8).unwrap();
        assert_eq!(r.data[0], -73);
        assert_eq!(-67 - r.data[0], 6);

        let c = decompose(&w, 4, RoundingStrategy::BitShift, true).unwrap();
        assert_eq!((c.high.data[0], c.low.data[0]), (-5, 13));
        assert_eq!(c.low.bits, 5);
        assert_eq!(recompose(&c.high, &c.low, 4, 8).unwrap().data[0], -67);
    }

    #[test]
    fn zero_decomposes_to_zero() {
        for s in RoundingStrategy::ALL {
            for h in 3..8 {
                let d = decompose(&scalar(0, 8), h, s, true).unwrap();
                assert_eq!((d.high.data[0], d.low.data[0]), (0, 0));
            }
        }
        let z = IntTensor::new(vec![1], 4, vec![0]).unwrap();
        assert_eq!(recompose(&z, &z, 3, 8).unwrap().data, vec![0]);
    }

    #[test]
    fn invalid_split_rejected() {
        assert!(matches!(
            decompose(&scalar(3, 8), 8, RoundingStrategy::Rtn, true),
            Err(Error::InvalidCombination { n: 8, h: 8 })
        ));
        assert!(check_combination(8, 2).is_err());
        assert!(check_combination(7, 4).is_err());
        assert!(check_combination(6, 5).is_ok());
    }

    #[test]
    fn recompose_detects_out_of_range() {
        let hi = IntTensor::new(vec![1], 4, vec![-8]).unwrap();
        let lo = IntTensor::new(vec![1], 5, vec![-16]).unwrap();
        assert!(matches!(recompose(&hi, &lo, 4, 8), Err(Error::Corruption { value: -144, .. })));
    }

    #[test]
    fn census_rtn_8_4() {
        let c = error_census(8, 4, RoundingStrategy::Rtn).unwrap();
        assert_eq!((c.nonzero_count, c.error_min, c.error_max), (16, 0, 8));
        assert_eq!(c.total(), 256);
    }

    #[test]
    fn census_up_8_7() {
        let c = error_census(8, 7, RoundingStrategy::Up).unwrap();
        assert_eq!((c.nonzero_count, c.error_min, c.error_max), (1, 0, 1));
    }

    #[test]
    fn compensated_census_is_clean() {
        for s in RoundingStrategy::SCALAR {
            for h in 3..8 {
                let c = error_census_with(8, h, s, true).unwrap();
                assert_eq!(c.nonzero_count, 0);
                assert_eq!(c.histogram.get(&0), Some(&256));
            }
        }
        assert!(error_census(8, 4, RoundingStrategy::ADAPTIVE).is_err());
    }

    #[test]
    fn advisor_cut_points() {
        assert_eq!(advise_nested_bits(16.3, 8).unwrap(), 5);
        assert_eq!(advise_nested_bits(44.7, 8).unwrap(), 4);
        assert_eq!(advise_nested_bits(330.3, 8).unwrap(), 3);
        assert_eq!(advise_nested_bits(29.999, 8).unwrap(), 5);
        assert_eq!(advise_nested_bits(30.0, 8).unwrap(), 4);
        assert_eq!(advise_nested_bits(300.0, 8).unwrap(), 3);
        assert_eq!(advise_nested_bits(10.0, 6).unwrap(), 4);
        assert!(advise_nested_bits(0.0, 8).is_err());
        assert!(advise_nested_bits(10.0, 7).is_err());
    }

    #[test]
    fn exhaustive_lossless_n6_n8() {
        for n in [6u8, 8] {
            let (lo, hi) = signed_range(n);
            let vals: Vec<i32> = (lo..=hi).map(|v| v as i32).collect();
            let w = IntTensor::new(vec![vals.len()], n, vals).unwrap();
            for h in 3..n {
                for s in RoundingStrategy::ALL.into_iter().chain([RoundingStrategy::Adaptive { group_axis: None }]) {
                    let d = decompose(&w, h, s, true).unwrap();
                    assert_eq!(d.clipped, 0);
                    let r = recompose(&d.high, &d.low, (n - h) as u32, n).unwrap();
                    assert_eq!(r, w, "n={n} h={h} {s}");
                }
            }
        }
    }

    #[test]
    fn scale_law_is_exact() {
        let w = FloatTensor::new(vec![2, 3], vec![0.3, -1.2, 0.05, 0.9, -0.7, 0.11]).unwrap();
        let layer = nest_layer("w", &w, &NestConfig::new(8, 4, RoundingStrategy::ADAPTIVE)).unwrap();
        let part = layer.part_quantized().unwrap();
        let high = layer.high_ints().unwrap();
        for (i, &v) in high.data.iter().enumerate() {
            assert_eq!(part.scale_at(i) * v as f32, layer.scale * (v * 16) as f32);
        }
    }
}
