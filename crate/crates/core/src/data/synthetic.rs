use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Dataset;
use crate::seed::rng_for;

/// Gaussian class clusters with seeded means and a shared diagonal covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub clients: usize,
    /// Samples of each class generated per client.
    pub samples_per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Standard deviation of the class means around the origin.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    24
}

fn default_separation() -> f64 {
    0.75
}

impl SyntheticSpec {
    /// Six classes, 512 samples per class per client, 24 features.
    pub fn industrial(clients: usize, seed: u64) -> Self {
        Self {
            num_classes: 6,
            clients,
            samples_per_class: 512,
            dim: default_dim(),
            separation: default_separation(),
            seed,
        }
    }
}

/// Classes `0..⌈n/2⌉` model healthy operating states, the rest anomalies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMetadata {
    pub healthy: Vec<usize>,
    pub anomalous: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub metadata: ClassMetadata,
    pub class_means: Vec<Vec<f64>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.num_classes < 2 {
        return Err(Error::InvalidConfig("synthetic data needs at least two classes".into()));
    }
    if spec.dim == 0 || spec.clients == 0 || spec.samples_per_class == 0 {
        return Err(Error::InvalidConfig("synthetic dimension, clients and samples must be positive".into()));
    }
    let mut rng = rng_for(spec.seed, "synthetic-params", 0, 0);
    let class_means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..spec.dim).map(|_| spec.separation * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let noise_std: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(0.5..1.5)).collect();

    let mut rng = rng_for(spec.seed, "synthetic-samples", 0, 0);
    let rounds = spec.samples_per_class * spec.clients;
    let mut features = Vec::with_capacity(rounds * spec.num_classes * spec.dim);
    let mut labels = Vec::with_capacity(rounds * spec.num_classes);
    for _ in 0..rounds {
        for (class, mean) in class_means.iter().enumerate() {
            features.extend(
                mean.iter()
                    .zip(&noise_std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)),
            );
            labels.push(class);
        }
    }
    let healthy_count = spec.num_classes.div_ceil(2);
    Ok(SyntheticData {
        dataset: Dataset::new(features, spec.dim, labels, spec.num_classes)?,
        metadata: ClassMetadata {
            healthy: (0..healthy_count).collect(),
            anomalous: (healthy_count..spec.num_classes).collect(),
        },
        class_means,
    })
}

pub fn generate_synthetic_industrial(clients: usize, seed: u64) -> Result<SyntheticData> {
    generate_synthetic(&SyntheticSpec::industrial(clients, seed))
}
