use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradient, Dataset, ModelSpec, ParamVector};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DropoutMode {
    #[default]
    Enabled,
    Disabled,
}

/// Local SGD settings for one `client_update` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub dropout: DropoutMode,
    /// Index of the first epoch. Shuffling and dropout streams are keyed by the
    /// absolute epoch, so training `a` epochs then `b` more from offset `a`
    /// replays exactly the same batches as a single `a + b` epoch run.
    #[serde(default)]
    pub epoch_offset: usize,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self { learning_rate, epochs, batch_size, seed, dropout: DropoutMode::Enabled, epoch_offset: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of SGD steps taken for `n` samples: one per (possibly partial) batch per epoch.
pub fn sgd_steps(n: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * n.div_ceil(batch_size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub params: ParamVector,
    pub steps: usize,
    /// Mean mini-batch loss over the final epoch.
    pub last_epoch_loss: f64,
}

/// E epochs of mini-batch SGD on `data` starting from `w0`.
///
/// Returns `Error::Diverged` with the 1-based step index as soon as any
/// parameter becomes non-finite.
pub fn client_update(
    spec: &ModelSpec,
    client: usize,
    w0: &ParamVector,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("client has no training data"));
    }
    let mut w = w0.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    let mut last_epoch_loss = 0.0;
    for e in 0..cfg.epochs {
        let epoch = (cfg.epoch_offset + e) as u64;
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", client as u64, epoch));
        let mut dropout_rng = rng_for(cfg.seed, "dropout", client as u64, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let rng: Option<&mut dyn rand::RngCore> = match cfg.dropout {
                DropoutMode::Enabled => Some(&mut dropout_rng),
                DropoutMode::Disabled => None,
            };
            let (l, g) = loss_and_gradient(spec, &w, &batch, rng)?;
            steps += 1;
            for (p, gi) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p -= cfg.learning_rate * gi;
            }
            if !w.is_finite() {
                return Err(Error::Diverged { step: steps });
            }
            epoch_loss += l;
            batches += 1;
        }
        last_epoch_loss = epoch_loss / batches as f64;
    }
    Ok(Trained { params: w, steps, last_epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, loss, Layer};

    fn blobs(n: usize) -> Dataset {
        let mut f = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let s = if c == 0 { -1.0 } else { 1.0 };
            let jitter = ((i * 37) % 11) as f64 / 11.0 - 0.5;
            f.extend_from_slice(&[s * 2.0 + jitter * 0.5, s + jitter]);
            y.push(c);
        }
        Dataset::new(f, 2, y, 2).unwrap()
    }

    #[test]
    fn zero_learning_rate_returns_start() {
        let spec = ModelSpec::industrial(2, 2).unwrap();
        let w0 = init_params(&spec, 1);
        let out = client_update(&spec, 0, &w0, &TrainConfig::new(0.0, 3, 7, 9), &blobs(20)).unwrap();
        assert_eq!(out.params, w0);
        assert_eq!(out.steps, 3 * 3);
    }

    #[test]
    fn step_count_matches_ceiling() {
        assert_eq!(sgd_steps(6000, 128, 10), 470);
        assert_eq!(sgd_steps(128, 128, 1), 1);
        assert_eq!(sgd_steps(129, 128, 2), 4);
    }

    #[test]
    fn deterministic_and_learns() {
        let spec = ModelSpec::mlp(2, 8, 2).unwrap();
        let data = blobs(64);
        let w0 = init_params(&spec, 4);
        let cfg = TrainConfig::new(0.1, 20, 8, 17);
        let a = client_update(&spec, 3, &w0, &cfg, &data).unwrap();
        let b = client_update(&spec, 3, &w0, &cfg, &data).unwrap();
        assert_eq!(a.params, b.params);
        assert!(loss(&spec, &a.params, &data).unwrap() < loss(&spec, &w0, &data).unwrap());
    }

    #[test]
    fn divergence_reports_step() {
        let spec = ModelSpec::new(vec![Layer::Dense { input: 2, output: 2 }, Layer::Softmax]).unwrap();
        let data = Dataset::new(vec![1e300, 1e300], 2, vec![0], 2).unwrap();
        let w0 = ParamVector::zeros(6);
        let err = client_update(&spec, 0, &w0, &TrainConfig::new(1e10, 1, 1, 0), &data).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1 }));
    }
}
