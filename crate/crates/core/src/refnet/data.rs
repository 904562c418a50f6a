use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian-blob classification task parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub features: usize,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    /// Spread of the class centres around `offset`.
    pub center_std: f32,
    /// Per-sample noise around the class centre.
    pub noise: f32,
    /// Shared shift applied to every feature.
    #[serde(default)]
    pub offset: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub features: usize,
    pub classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SyntheticDataset {
    /// Draws class centres, then balanced train and test splits.
    pub fn generate(cfg: &DataConfig, seed: u64) -> Result<Self> {
        if cfg.features == 0 || cfg.classes < 2 {
            return Err(Error::Config(format!(
                "need at least one feature and two classes, got {} and {}",
                cfg.features, cfg.classes
            )));
        }
        let centre = Normal::new(0.0f32, cfg.center_std).map_err(|e| Error::Config(e.to_string()))?;
        let noise = Normal::new(0.0f32, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres: Vec<Vec<f32>> = (0..cfg.classes)
            .map(|_| (0..cfg.features).map(|_| cfg.offset + centre.sample(&mut rng)).collect())
            .collect();
        let draw = |count: usize, rng: &mut ChaCha8Rng| {
            let mut out: Vec<Sample> = (0..count)
                .map(|i| {
                    let label = i % cfg.classes;
                    let x = centres[label].iter().map(|&c| c + noise.sample(rng)).collect();
                    Sample { x, label }
                })
                .collect();
            out.shuffle(rng);
            out
        };
        let train = draw(cfg.train, &mut rng);
        let test = draw(cfg.test, &mut rng);
        Ok(Self {
            seed,
            features: cfg.features,
            classes: cfg.classes,
            train,
            test,
        })
    }
}
