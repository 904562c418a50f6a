use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{bias_name, layer_forward, weight_name, Architecture, DataConfig, EvalMode, LayerSpec, RefNet, Sample, SyntheticDataset};
use crate::error::{Error, Result};
use crate::quantizer::FloatTensor;
use crate::store::FloatModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Learning rate is multiplied by this after every epoch.
    #[serde(default = "one")]
    pub lr_decay: f32,
    /// Minimum FP32 test accuracy; below it training counts as failed.
    #[serde(default)]
    pub accuracy_floor: f64,
}

fn one() -> f32 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefConfig {
    pub data: DataConfig,
    pub model: Architecture,
    pub train: TrainConfig,
}

impl RefConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RefConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The configuration shipped in `configs/refnet.toml`.
    pub fn builtin() -> Self {
        Self::from_toml(include_str!("../../configs/refnet.toml")).expect("bundled config parses")
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.model.shapes()?;
        if shapes[0].iter().product::<usize>() != self.data.features {
            return Err(Error::Config(format!(
                "input shape {:?} does not hold {} features",
                shapes[0], self.data.features
            )));
        }
        if self.model.output_dim()? != self.data.classes {
            return Err(Error::Config(format!(
                "network has {} outputs for {} classes",
                self.model.output_dim()?,
                self.data.classes
            )));
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// He-normal weights, zero biases.
fn init_params(arch: &Architecture, rng: &mut ChaCha8Rng) -> FloatModel {
    let mut layers = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        let (wshape, bdim) = match *layer {
            LayerSpec::Dense { input, output } => (vec![output, input], output),
            LayerSpec::Conv2d { in_ch, out_ch, k } => (vec![out_ch, in_ch, k, k], out_ch),
            _ => continue,
        };
        let fan_in: usize = wshape[1..].iter().product();
        let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        let n: usize = wshape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        layers.push((weight_name(i), FloatTensor { shape: wshape, data }));
        layers.push((bias_name(i), FloatTensor { shape: vec![bdim], data: vec![0.0; bdim] }));
    }
    FloatModel { layers }
}

/// Gradients of one layer's input, weights and bias given its output gradient.
fn layer_backward(
    layer: &LayerSpec,
    in_shape: &[usize],
    w: Option<&[f32]>,
    x: &[f32],
    gy: &[f32],
    gw: Option<&mut [f32]>,
    gb: Option<&mut [f32]>,
) -> Vec<f32> {
    match *layer {
        LayerSpec::Dense { input, output } => {
            let (w, gw, gb) = (w.expect("weight"), gw.expect("grad"), gb.expect("grad"));
            let mut gx = vec![0.0f32; input];
            for o in 0..output {
                let g = gy[o];
                gb[o] += g;
                let row = &w[o * input..(o + 1) * input];
                let grow = &mut gw[o * input..(o + 1) * input];
                for i in 0..input {
                    grow[i] += g * x[i];
                    gx[i] += g * row[i];
                }
            }
            gx
        }
        LayerSpec::Conv2d { in_ch, out_ch, k } => {
            let (w, gw, gb) = (w.expect("weight"), gw.expect("grad"), gb.expect("grad"));
            let (h, wd) = (in_shape[1], in_shape[2]);
            let (oh, ow) = (h - k + 1, wd - k + 1);
            let mut gx = vec![0.0f32; x.len()];
            for o in 0..out_ch {
                for r in 0..oh {
                    for c in 0..ow {
                        let g = gy[(o * oh + r) * ow + c];
                        gb[o] += g;
                        for ci in 0..in_ch {
                            for a in 0..k {
                                for b in 0..k {
                                    let wi = ((o * in_ch + ci) * k + a) * k + b;
                                    let xi = (ci * h + r + a) * wd + c + b;
                                    gw[wi] += g * x[xi];
                                    gx[xi] += g * w[wi];
                                }
                            }
                        }
                    }
                }
            }
            gx
        }
        LayerSpec::Relu => x.iter().zip(gy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
        LayerSpec::Flatten => gy.to_vec(),
    }
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
fn softmax_xent(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let mut grad: Vec<f32> = exps.iter().map(|e| e / sum).collect();
    let loss = -(grad[label].max(f32::MIN_POSITIVE)).ln();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Parameter slots indexed by layer; `None` for parameter-free layers.
struct Slots {
    w: Vec<Option<Vec<f32>>>,
    b: Vec<Option<Vec<f32>>>,
}

impl Slots {
    fn zeros_like(params: &Slots) -> Slots {
        let z = |v: &Vec<Option<Vec<f32>>>| v.iter().map(|o| o.as_ref().map(|p| vec![0.0; p.len()])).collect();
        Slots { w: z(&params.w), b: z(&params.b) }
    }
}

/// Loss of one sample; accumulates parameter gradients into `grads`.
fn backprop(arch: &Architecture, shapes: &[Vec<usize>], p: &Slots, grads: &mut Slots, s: &Sample) -> f32 {
    let mut acts = vec![s.x.clone()];
    for (i, layer) in arch.layers.iter().enumerate() {
        let y = layer_forward(layer, &shapes[i], p.w[i].as_deref(), p.b[i].as_deref(), &acts[i]);
        acts.push(y);
    }
    let (loss, mut g) = softmax_xent(acts.last().expect("output"), s.label);
    for (i, layer) in arch.layers.iter().enumerate().rev() {
        g = layer_backward(
            layer,
            &shapes[i],
            p.w[i].as_deref(),
            &acts[i],
            &g,
            grads.w[i].as_deref_mut(),
            grads.b[i].as_deref_mut(),
        );
    }
    loss
}

fn to_slots(arch: &Architecture, params: &FloatModel) -> Slots {
    let get = |name: String| params.get(&name).map(|t| t.data.clone());
    Slots {
        w: (0..arch.layers.len()).map(|i| get(weight_name(i))).collect(),
        b: (0..arch.layers.len()).map(|i| get(bias_name(i))).collect(),
    }
}

fn from_slots(arch: &Architecture, slots: Slots) -> FloatModel {
    let mut layers = Vec::new();
    for (i, (w, b)) in slots.w.into_iter().zip(slots.b).enumerate() {
        if let (Some(w), Some(b)) = (w, b) {
            let (wshape, bdim) = arch.layers[i].param_shapes().expect("weighted");
            layers.push((weight_name(i), FloatTensor { shape: wshape, data: w }));
            layers.push((bias_name(i), FloatTensor { shape: vec![bdim], data: b }));
        }
    }
    FloatModel { layers }
}

/// Trains the configured network with minibatch SGD, single-threaded.
///
/// The dataset comes from `seed`; initialisation and shuffling use a separate
/// stream of the same seed.
pub fn train_reference(cfg: &RefConfig, seed: u64) -> Result<(RefNet, SyntheticDataset)> {
    cfg.validate()?;
    let data = SyntheticDataset::generate(&cfg.data, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let arch = &cfg.model;
    let shapes = arch.shapes()?;
    let mut p = to_slots(arch, &init_params(arch, &mut rng));

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut lr = cfg.train.learning_rate;
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.train.batch_size) {
            let mut g = Slots::zeros_like(&p);
            for &i in batch {
                epoch_loss += backprop(arch, &shapes, &p, &mut g, &data.train[i]) as f64;
            }
            let step = lr / batch.len() as f32;
            for (param, grad) in p.w.iter_mut().chain(p.b.iter_mut()).zip(g.w.iter().chain(g.b.iter())) {
                if let (Some(param), Some(grad)) = (param, grad) {
                    for (v, d) in param.iter_mut().zip(grad) {
                        *v -= step * d;
                    }
                }
            }
        }
        let mean = epoch_loss / data.train.len().max(1) as f64;
        if !mean.is_finite() || p.w.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {mean:.4}");
        lr *= cfg.train.lr_decay;
    }

    let net = RefNet::new(arch.clone(), from_slots(arch, p))?;
    let acc = net.evaluate(&data.test, EvalMode::Fp32, 8)?;
    if acc < cfg.train.accuracy_floor {
        return Err(Error::Training(format!(
            "test accuracy {acc:.4} below floor {}",
            cfg.train.accuracy_floor
        )));
    }
    Ok((net, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_config(epochs: usize, floor: f64) -> RefConfig {
        RefConfig {
            data: DataConfig {
                features: 8,
                classes: 4,
                train: 2000,
                test: 1000,
                center_std: 1.5,
                noise: 1.0,
                offset: 0.0,
            },
            model: Architecture {
                input_shape: vec![8],
                layers: vec![
                    LayerSpec::Dense { input: 8, output: 32 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { input: 32, output: 32 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { input: 32, output: 4 },
                ],
            },
            train: TrainConfig {
                epochs,
                batch_size: 32,
                learning_rate: 0.05,
                lr_decay: 1.0,
                accuracy_floor: floor,
            },
        }
    }

    #[test]
    fn mlp_learns_blobs() {
        let (net, data) = train_reference(&mlp_config(10, 0.9), 3).unwrap();
        assert!(net.evaluate(&data.test, EvalMode::Fp32, 8).unwrap() > 0.9);
    }

    #[test]
    fn deterministic() {
        let (a, _) = train_reference(&mlp_config(2, 0.0), 11).unwrap();
        let (b, _) = train_reference(&mlp_config(2, 0.0), 11).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_epochs_is_chance() {
        let mut total = 0.0;
        for seed in 0..8 {
            let (net, data) = train_reference(&mlp_config(0, 0.0), seed).unwrap();
            total += net.evaluate(&data.test, EvalMode::Fp32, 8).unwrap();
        }
        assert!((total / 8.0 - 0.25).abs() < 0.12, "{}", total / 8.0);
    }

    #[test]
    fn floor_and_divergence_fail() {
        assert!(matches!(train_reference(&mlp_config(0, 0.99), 1), Err(Error::Training(_))));
        let mut cfg = mlp_config(3, 0.0);
        cfg.train.learning_rate = 1e30;
        assert!(matches!(train_reference(&cfg, 1), Err(Error::Training(_))));
    }

    #[test]
    fn config_checks() {
        let mut cfg = mlp_config(1, 0.0);
        cfg.data.classes = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(RefConfig::from_toml("[data]\nfeatures = 1").is_err());
        RefConfig::builtin().validate().unwrap();
    }

    // Central differences on every parameter of a small conv + dense net.
    #[test]
    fn gradients_match_finite_differences() {
        let arch = Architecture {
            input_shape: vec![2, 4, 4],
            layers: vec![
                LayerSpec::Conv2d { in_ch: 2, out_ch: 3, k: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 27, output: 3 },
            ],
        };
        let shapes = arch.shapes().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = init_params(&arch, &mut rng);
        for (_, t) in params.layers.iter_mut() {
            for (j, v) in t.data.iter_mut().enumerate() {
                *v += 0.01 * (j % 7) as f32;
            }
        }
        let p = to_slots(&arch, &params);
        let eps = 1e-3f32;
        // keep every ReLU input well clear of the kink so differences are smooth
        let noise = Normal::new(0.0f32, 1.0).unwrap();
        let sample = loop {
            let s = Sample {
                x: (0..32).map(|_| noise.sample(&mut rng)).collect(),
                label: 1,
            };
            let pre = layer_forward(&arch.layers[0], &shapes[0], p.w[0].as_deref(), p.b[0].as_deref(), &s.x);
            if pre.iter().all(|v| v.abs() > 20.0 * eps) {
                break s;
            }
        };
        let mut g = Slots::zeros_like(&p);
        backprop(&arch, &shapes, &p, &mut g, &sample);

        let loss_at = |slots: &Slots| {
            let mut scratch = Slots::zeros_like(slots);
            backprop(&arch, &shapes, slots, &mut scratch, &sample) as f64
        };
        let mut checked = 0;
        for li in [0usize, 3] {
            for which in 0..2 {
                let len = if which == 0 { p.w[li].as_ref().unwrap().len() } else { p.b[li].as_ref().unwrap().len() };
                for j in 0..len {
                    let bump = |d: f32| {
                        let mut q = to_slots(&arch, &params);
                        let v = if which == 0 { q.w[li].as_mut().unwrap() } else { q.b[li].as_mut().unwrap() };
                        v[j] += d;
                        loss_at(&q)
                    };
                    let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps as f64);
                    let analytic = if which == 0 { g.w[li].as_ref().unwrap()[j] } else { g.b[li].as_ref().unwrap()[j] } as f64;
                    assert!(
                        (numeric - analytic).abs() < 2e-2 * (1.0 + analytic.abs()),
                        "layer {li} param {which}/{j}: {numeric} vs {analytic}"
                    );
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 24 + 3 + 81 + 3);
    }
}
