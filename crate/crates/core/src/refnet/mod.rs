//! A small reference network for measuring what nesting does to accuracy.
//!
//! Weights live in a [`FloatModel`] keyed `layers.{i}.weight` /
//! `layers.{i}.bias`. Quantized inference swaps the FP32 weights of each
//! weighted layer for an overlay and fake-quantizes the activations that
//! feed it; biases always stay in FP32.

mod corr;
mod data;
mod train;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use corr::{correlations, correlations_f64, kendall_tau_b, pearson, ranks, Correlations};
pub use data::{DataConfig, Sample, SyntheticDataset};
pub use train::{train_reference, RefConfig, TrainConfig};

use crate::error::{Error, Result};
use crate::nesting::NestedLayer;
use crate::quantizer::{self, FloatTensor, QuantizedTensor};
use crate::store::{FloatModel, NestedModel};
use crate::switch::{Mode, SwitchState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv2d { in_ch: usize, out_ch: usize, k: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: String| Error::Config(format!("{self:?}: {what}"));
        match *self {
            LayerSpec::Dense { input: i, output } => {
                if input != [i] {
                    return Err(bad(format!("expects input [{i}], got {input:?}")));
                }
                Ok(vec![output])
            }
            LayerSpec::Conv2d { in_ch, out_ch, k } => match *input {
                [c, h, w] if c == in_ch && k >= 1 && h >= k && w >= k => Ok(vec![out_ch, h - k + 1, w - k + 1]),
                _ => Err(bad(format!("incompatible input {input:?}"))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Dense { input, output } => Some((vec![output, input], output)),
            LayerSpec::Conv2d { in_ch, out_ch, k } => Some((vec![out_ch, in_ch, k, k], out_ch)),
            _ => None,
        }
    }
}

/// Network topology: input shape plus layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Activation shapes: entry `i` is the input of layer `i`, the last is the output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        match shapes.last().map(Vec::as_slice) {
            Some([_]) => Ok(shapes),
            other => Err(Error::Config(format!("network must end in a vector, got {other:?}"))),
        }
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self.shapes()?.last().expect("non-empty")[0])
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("layers.{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layers.{layer}.bias")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Fp32,
    FullBit,
    PartBit,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(EvalMode::Fp32),
            "full" | "full_bit" | "full-bit" => Ok(EvalMode::FullBit),
            "part" | "part_bit" | "part-bit" => Ok(EvalMode::PartBit),
            other => Err(Error::Mode(format!("unknown mode `{other}`"))),
        }
    }
}

/// Replacement weights for one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    /// Usable in full-bit mode only.
    Full(QuantizedTensor),
    /// Usable in part-bit mode only.
    Part(QuantizedTensor),
    /// Serves either mode.
    Nested(NestedLayer),
}

impl Overlay {
    fn shape(&self) -> &[usize] {
        match self {
            Overlay::Full(q) | Overlay::Part(q) => &q.ints.shape,
            Overlay::Nested(l) => &l.shape,
        }
    }

    fn resolve(&self, name: &str, mode: EvalMode) -> Result<Vec<f32>> {
        let q = match (self, mode) {
            (Overlay::Full(q), EvalMode::FullBit) | (Overlay::Part(q), EvalMode::PartBit) => q.clone(),
            (Overlay::Nested(l), EvalMode::FullBit) => l.full_quantized().map_err(|e| e.in_layer(name))?,
            (Overlay::Nested(l), EvalMode::PartBit) => {
                if l.h == l.n {
                    return Err(Error::Mode(format!("`{}` is standalone, not nested", l.name)));
                }
                l.part_quantized().map_err(|e| e.in_layer(name))?
            }
            (o, m) => {
                return Err(Error::Mode(format!(
                    "{} overlay on `{name}` cannot serve {m:?}",
                    o.kind()
                )))
            }
        };
        Ok(quantizer::dequantize(&q).data)
    }

    fn kind(&self) -> &'static str {
        match self {
            Overlay::Full(_) => "full-bit",
            Overlay::Part(_) => "part-bit",
            Overlay::Nested(_) => "nested",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefNet {
    pub arch: Architecture,
    pub params: FloatModel,
    overlays: BTreeMap<String, Overlay>,
}

/// Weights and biases resolved for one mode, indexed by layer.
struct Resolved {
    weights: Vec<Option<Vec<f32>>>,
    biases: Vec<Option<Vec<f32>>>,
}

impl RefNet {
    /// Wraps existing parameters, checking every weighted layer has them.
    pub fn new(arch: Architecture, params: FloatModel) -> Result<Self> {
        arch.shapes()?;
        for (i, layer) in arch.layers.iter().enumerate() {
            if let Some((wshape, bdim)) = layer.param_shapes() {
                for (name, shape) in [(weight_name(i), wshape), (bias_name(i), vec![bdim])] {
                    match params.get(&name) {
                        Some(t) if t.shape == shape => {}
                        Some(t) => {
                            return Err(Error::ShapeMismatch {
                                shape: t.shape.clone(),
                                expected: shape.iter().product(),
                                actual: t.len(),
                            }
                            .in_layer(&name))
                        }
                        None => return Err(Error::InvalidModel(format!("missing parameter `{name}`"))),
                    }
                }
            }
        }
        Ok(Self {
            arch,
            params,
            overlays: BTreeMap::new(),
        })
    }

    pub fn weight_names(&self) -> Vec<String> {
        self.arch
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| weight_name(i))
            .collect()
    }

    pub fn set_overlay(&mut self, name: &str, overlay: Overlay) -> Result<()> {
        let fp = self
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidModel(format!("no weight named `{name}`")))?;
        if !self.weight_names().iter().any(|w| w == name) {
            return Err(Error::InvalidModel(format!("`{name}` is not a layer weight")));
        }
        if overlay.shape() != fp.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                shape: overlay.shape().to_vec(),
                expected: fp.len(),
                actual: overlay.shape().iter().product(),
            }
            .in_layer(name));
        }
        self.overlays.insert(name.to_string(), overlay);
        Ok(())
    }

    /// Overlays every layer of a nested (or standalone) model.
    pub fn overlay_nested(&mut self, model: &NestedModel) -> Result<()> {
        for layer in &model.layers {
            self.set_overlay(&layer.name, Overlay::Nested(layer.clone()))?;
        }
        Ok(())
    }

    /// Overlays whatever weights a switching runtime currently holds.
    pub fn overlay_switch(&mut self, state: &SwitchState) -> Result<()> {
        let mode = state.mode();
        for (name, q) in state.weights() {
            let overlay = match mode {
                Mode::FullBit => Overlay::Full(q),
                Mode::PartBit => Overlay::Part(q),
            };
            self.set_overlay(name, overlay)?;
        }
        Ok(())
    }

    pub fn clear_overlays(&mut self) {
        self.overlays.clear();
    }

    pub fn overlay(&self, name: &str) -> Option<&Overlay> {
        self.overlays.get(name)
    }

    fn resolve(&self, mode: EvalMode) -> Result<Resolved> {
        let mut weights = Vec::with_capacity(self.arch.layers.len());
        let mut biases = Vec::with_capacity(self.arch.layers.len());
        for (i, layer) in self.arch.layers.iter().enumerate() {
            if !layer.is_weighted() {
                weights.push(None);
                biases.push(None);
                continue;
            }
            let name = weight_name(i);
            let w = match mode {
                EvalMode::Fp32 => self.param(&name)?.data.clone(),
                _ => self
                    .overlays
                    .get(&name)
                    .ok_or_else(|| Error::Mode(format!("no overlay for `{name}` in {mode:?} mode")))?
                    .resolve(&name, mode)?,
            };
            weights.push(Some(w));
            biases.push(Some(self.param(&bias_name(i))?.data.clone()));
        }
        Ok(Resolved { weights, biases })
    }

    fn param(&self, name: &str) -> Result<&FloatTensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidModel(format!("missing parameter `{name}`")))
    }

    /// Logits for one input vector.
    pub fn forward(&self, input: &[f32], mode: EvalMode, act_bits: u8) -> Result<Vec<f32>> {
        let resolved = self.resolve(mode)?;
        let shapes = self.arch.shapes()?;
        self.forward_resolved(&resolved, &shapes, input, mode, act_bits)
    }

    fn forward_resolved(
        &self,
        r: &Resolved,
        shapes: &[Vec<usize>],
        input: &[f32],
        mode: EvalMode,
        act_bits: u8,
    ) -> Result<Vec<f32>> {
        let expected: usize = self.arch.input_shape.iter().product();
        if input.len() != expected {
            return Err(Error::ShapeMismatch {
                shape: self.arch.input_shape.clone(),
                expected,
                actual: input.len(),
            });
        }
        let mut x = input.to_vec();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            if layer.is_weighted() && mode != EvalMode::Fp32 {
                fake_quant(&mut x, act_bits)?;
            }
            x = layer_forward(
                layer,
                &shapes[i],
                r.weights[i].as_deref(),
                r.biases[i].as_deref(),
                &x,
            );
        }
        Ok(x)
    }

    /// Test-split accuracy: fraction of correct argmax predictions.
    pub fn evaluate(&self, data: &[Sample], mode: EvalMode, act_bits: u8) -> Result<f64> {
        let preds = self.predict(data, mode, act_bits)?;
        Ok(accuracy(&preds, data))
    }

    /// Argmax class per sample; batches run in parallel.
    pub fn predict(&self, data: &[Sample], mode: EvalMode, act_bits: u8) -> Result<Vec<usize>> {
        let resolved = self.resolve(mode)?;
        let shapes = self.arch.shapes()?;
        data.par_iter()
            .map(|s| {
                self.forward_resolved(&resolved, &shapes, &s.x, mode, act_bits)
                    .map(|logits| argmax(&logits))
            })
            .collect()
    }

    /// Logits for every sample.
    pub fn logits(&self, data: &[Sample], mode: EvalMode, act_bits: u8) -> Result<Vec<Vec<f32>>> {
        let resolved = self.resolve(mode)?;
        let shapes = self.arch.shapes()?;
        data.par_iter()
            .map(|s| self.forward_resolved(&resolved, &shapes, &s.x, mode, act_bits))
            .collect()
    }
}

pub fn accuracy(preds: &[usize], data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = preds.iter().zip(data).filter(|(p, s)| **p == s.label).count();
    correct as f64 / data.len() as f64
}

/// First index of the maximum.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Quantize-dequantize with an asymmetric min-max grid over the live tensor.
pub fn fake_quant(x: &mut [f32], bits: u8) -> Result<()> {
    if !(2..=16).contains(&bits) {
        return Err(Error::InvalidBitwidth(bits));
    }
    let (lo, hi) = x
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Ok(());
    }
    let levels = ((1u32 << bits) - 1) as f32;
    let scale = (hi - lo) / levels;
    for v in x.iter_mut() {
        let q = ((*v - lo) / scale).round().clamp(0.0, levels);
        *v = q * scale + lo;
    }
    Ok(())
}

pub(crate) fn layer_forward(
    layer: &LayerSpec,
    in_shape: &[usize],
    w: Option<&[f32]>,
    b: Option<&[f32]>,
    x: &[f32],
) -> Vec<f32> {
    match *layer {
        LayerSpec::Dense { input, output } => {
            let (w, b) = (w.expect("dense weight"), b.expect("dense bias"));
            (0..output)
                .map(|o| {
                    let row = &w[o * input..(o + 1) * input];
                    b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f32>()
                })
                .collect()
        }
        LayerSpec::Conv2d { in_ch, out_ch, k } => {
            let (w, b) = (w.expect("conv weight"), b.expect("conv bias"));
            let (h, wd) = (in_shape[1], in_shape[2]);
            let (oh, ow) = (h - k + 1, wd - k + 1);
            let mut y = vec![0.0f32; out_ch * oh * ow];
            for o in 0..out_ch {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = b[o];
                        for ci in 0..in_ch {
                            for a in 0..k {
                                let wrow = &w[((o * in_ch + ci) * k + a) * k..][..k];
                                let xrow = &x[(ci * h + r + a) * wd + c..][..k];
                                acc += wrow.iter().zip(xrow).map(|(p, q)| p * q).sum::<f32>();
                            }
                        }
                        y[(o * oh + r) * ow + c] = acc;
                    }
                }
            }
            y
        }
        LayerSpec::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        LayerSpec::Flatten => x.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nesting::{nest_model, NestConfig};
    use crate::rounding::RoundingStrategy;

    pub(super) fn tiny_arch() -> Architecture {
        Architecture {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense { input: 3, output: 3 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 3, output: 2 },
            ],
        }
    }

    fn identity_net() -> RefNet {
        let arch = Architecture {
            input_shape: vec![3],
            layers: vec![LayerSpec::Dense { input: 3, output: 3 }, LayerSpec::Relu],
        };
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let params = FloatModel {
            layers: vec![
                (weight_name(0), FloatTensor::new(vec![3, 3], eye).unwrap()),
                (bias_name(0), FloatTensor::new(vec![3], vec![0.0; 3]).unwrap()),
            ],
        };
        RefNet::new(arch, params).unwrap()
    }

    #[test]
    fn identity_passes_positive_input() {
        let net = identity_net();
        let x = [0.5, 2.0, 3.25];
        assert_eq!(net.forward(&x, EvalMode::Fp32, 8).unwrap(), x.to_vec());
    }

    #[test]
    fn quantized_modes_need_overlays() {
        let net = identity_net();
        assert!(matches!(net.forward(&[1.0; 3], EvalMode::FullBit, 8), Err(Error::Mode(_))));
    }

    #[test]
    fn overlay_kinds_gate_modes() {
        let mut net = identity_net();
        let fp = FloatModel {
            layers: vec![(weight_name(0), net.params.get(&weight_name(0)).unwrap().clone())],
        };
        let m = nest_model(&fp, "id", &NestConfig::new(8, 4, RoundingStrategy::ADAPTIVE)).unwrap();
        let q = m.layers[0].full_quantized().unwrap();
        net.set_overlay(&weight_name(0), Overlay::Full(q)).unwrap();
        assert!(net.forward(&[1.0; 3], EvalMode::FullBit, 8).is_ok());
        assert!(matches!(net.forward(&[1.0; 3], EvalMode::PartBit, 8), Err(Error::Mode(_))));
        net.overlay_nested(&m).unwrap();
        assert!(net.forward(&[1.0; 3], EvalMode::PartBit, 8).is_ok());
        // fp32 ignores overlays
        assert_eq!(net.forward(&[1.0, 2.0, 3.0], EvalMode::Fp32, 8).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn overlay_shape_checked() {
        let mut net = identity_net();
        let q = QuantizedTensor::per_tensor(crate::quantizer::IntTensor::new(vec![2, 2], 8, vec![0; 4]).unwrap(), 1.0);
        assert!(net.set_overlay(&weight_name(0), Overlay::Full(q)).is_err());
        assert!(net
            .set_overlay("nope", Overlay::Full(QuantizedTensor::per_tensor(
                crate::quantizer::IntTensor::new(vec![1], 8, vec![0]).unwrap(),
                1.0
            )))
            .is_err());
    }

    #[test]
    fn shape_inference() {
        let arch = Architecture {
            input_shape: vec![2, 6, 5],
            layers: vec![
                LayerSpec::Conv2d { in_ch: 2, out_ch: 4, k: 3 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 48, output: 3 },
            ],
        };
        let s = arch.shapes().unwrap();
        assert_eq!(s[1], vec![4, 4, 3]);
        assert_eq!(s[3], vec![48]);
        assert_eq!(arch.output_dim().unwrap(), 3);
        let mut bad = arch.clone();
        bad.layers[3] = LayerSpec::Dense { input: 36, output: 3 };
        assert!(bad.shapes().is_err());
        bad.layers.truncate(2);
        assert!(bad.shapes().is_err(), "ends in a feature map");
        assert!(tiny_arch().shapes().is_ok());
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 input channel 3x3, one 2x2 kernel of ones: sums of 2x2 windows
        let layer = LayerSpec::Conv2d { in_ch: 1, out_ch: 1, k: 2 };
        let x: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let y = layer_forward(&layer, &[1, 3, 3], Some(&[1.0; 4]), Some(&[0.5]), &x);
        assert_eq!(y, vec![12.5, 16.5, 24.5, 28.5]);
    }

    #[test]
    fn fake_quant_grid() {
        let mut x = vec![0.0, 1.0, 0.26, 0.74];
        fake_quant(&mut x, 2).unwrap();
        let third = 1.0f32 / 3.0;
        assert_eq!(x, vec![0.0, 1.0, third, 2.0 * third]);
        let mut flat = vec![2.0; 4];
        fake_quant(&mut flat, 8).unwrap();
        assert_eq!(flat, vec![2.0; 4]);
        assert!(fake_quant(&mut flat, 1).is_err());
    }

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        assert_eq!(accuracy(&[0, 1], &[Sample { x: vec![], label: 0 }, Sample { x: vec![], label: 0 }]), 0.5);
    }
}
