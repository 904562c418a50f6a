//! Seeded synthetic FP32 models for size and overhead experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::quantizer::FloatTensor;
use crate::store::FloatModel;

/// Convolution weight shapes of a ResNet-18 body: every 3x3 and 1x1
/// convolution except the stem and the classifier. 11,157,504 parameters.
pub fn resnet18_body_shapes() -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    let mut in_ch = 64;
    for (stage, out_ch) in [64usize, 128, 256, 512].into_iter().enumerate() {
        for block in 0..2 {
            let cin = if block == 0 { in_ch } else { out_ch };
            let prefix = format!("layer{}.{}", stage + 1, block);
            shapes.push((format!("{prefix}.conv1.weight"), vec![out_ch, cin, 3, 3]));
            shapes.push((format!("{prefix}.conv2.weight"), vec![out_ch, out_ch, 3, 3]));
            if block == 0 && cin != out_ch {
                shapes.push((format!("{prefix}.downsample.weight"), vec![out_ch, cin, 1, 1]));
            }
        }
        in_ch = out_ch;
    }
    shapes
}

pub fn gaussian_tensor(shape: Vec<usize>, std: f32, rng: &mut ChaCha8Rng) -> FloatTensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0f32, std).expect("positive std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    FloatTensor { shape, data }
}

/// Gaussian weights with He-style per-layer standard deviation.
pub fn gaussian_model(shapes: &[(String, Vec<usize>)], seed: u64) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = shapes
        .iter()
        .map(|(name, shape)| {
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let std = (2.0 / fan_in as f32).sqrt();
            (name.clone(), gaussian_tensor(shape.clone(), std, &mut rng))
        })
        .collect();
    FloatModel { layers }
}

pub fn resnet18_body(seed: u64) -> FloatModel {
    gaussian_model(&resnet18_body_shapes(), seed)
}
