use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Lower clamp applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Layer {
    Dense { input: usize, output: usize },
    Relu,
    Dropout { rate: f64 },
    Softmax,
}

/// A validated stack of dense layers ending in softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecRepr", into = "ModelSpecRepr")]
pub struct ModelSpec {
    layers: Vec<Layer>,
    input_dim: usize,
    num_classes: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelSpecRepr {
    layers: Vec<Layer>,
}

impl TryFrom<ModelSpecRepr> for ModelSpec {
    type Error = Error;
    fn try_from(repr: ModelSpecRepr) -> Result<Self> {
        ModelSpec::new(repr.layers)
    }
}

impl From<ModelSpec> for ModelSpecRepr {
    fn from(spec: ModelSpec) -> Self {
        ModelSpecRepr { layers: spec.layers }
    }
}

impl ModelSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut input_dim = None;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output } => {
                    if input == 0 || output == 0 {
                        return Err(Error::InvalidModel(format!("layer {i}: dense dimensions must be positive")));
                    }
                    if let Some(w) = width {
                        if w != input {
                            return Err(Error::InvalidModel(format!(
                                "layer {i}: dense input {input} does not match preceding width {w}"
                            )));
                        }
                    }
                    input_dim.get_or_insert(input);
                    width = Some(output);
                }
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::InvalidModel(format!("layer {i}: dropout rate {rate} outside [0, 1)")));
                    }
                }
                Layer::Relu => {}
                Layer::Softmax => {
                    if i + 1 != layers.len() {
                        return Err(Error::InvalidModel(format!("layer {i}: softmax must be the final layer")));
                    }
                }
            }
        }
        let (Some(input_dim), Some(num_classes)) = (input_dim, width) else {
            return Err(Error::InvalidModel("model needs at least one dense layer".into()));
        };
        if layers.last() != Some(&Layer::Softmax) {
            return Err(Error::InvalidModel("final layer must be softmax".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidModel("softmax needs at least two classes".into()));
        }
        Ok(Self { layers, input_dim, num_classes })
    }

    /// Dense 64/ReLU, dropout 0.4, dense to the class count, dropout 0.4, softmax.
    pub fn industrial(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![
            Layer::Dense { input: input_dim, output: 64 },
            Layer::Relu,
            Layer::Dropout { rate: 0.4 },
            Layer::Dense { input: 64, output: num_classes },
            Layer::Dropout { rate: 0.4 },
            Layer::Softmax,
        ])
    }

    /// One hidden ReLU layer.
    pub fn mlp(input_dim: usize, hidden: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![
            Layer::Dense { input: input_dim, output: hidden },
            Layer::Relu,
            Layer::Dense { input: hidden, output: num_classes },
            Layer::Softmax,
        ])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Dense { input, output } => input * output + output,
                _ => 0,
            })
            .sum()
    }

    /// The same network with every dropout layer removed. Parameter layout is unchanged.
    pub fn without_dropout(&self) -> ModelSpec {
        let layers = self
            .layers
            .iter()
            .filter(|l| !matches!(l, Layer::Dropout { .. }))
            .cloned()
            .collect();
        ModelSpec { layers, ..self.clone() }
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim {
            return Err(Error::InvalidDataset(format!(
                "feature dimension {} does not match model input {}",
                data.dim(),
                self.input_dim
            )));
        }
        if data.num_classes() > self.num_classes {
            return Err(Error::InvalidDataset(format!(
                "dataset has {} classes but the model predicts {}",
                data.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::LengthMismatch { expected: self.param_count(), actual: w.len() });
        }
        Ok(())
    }
}

/// Flattened model parameters. Each dense layer contributes its weight matrix
/// (row-major, `output × input`) followed by its bias vector, in layer order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng_for(seed, "init", 0, 0);
    let mut values = Vec::with_capacity(spec.param_count());
    for layer in spec.layers() {
        if let Layer::Dense { input, output } = *layer {
            let limit = (6.0 / (input + output) as f64).sqrt();
            values.extend((0..input * output).map(|_| rng.random_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, output));
        }
    }
    ParamVector(values)
}

/// Numerically stable in-place softmax over consecutive rows of width `k`.
pub fn softmax_rows(values: &mut [f64], k: usize) {
    for row in values.chunks_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

enum Cache {
    Dense,
    Relu,
    Dropout(Vec<f64>),
    Softmax,
}

struct Forward {
    /// `inputs[i]` is the input to layer `i`; the final entry holds the probabilities.
    inputs: Vec<Vec<f64>>,
    caches: Vec<Cache>,
}

fn dense_forward(x: &[f64], n: usize, w: &[f64], input: usize, output: usize) -> Vec<f64> {
    let (weights, bias) = w.split_at(input * output);
    let mut out = vec![0.0; n * output];
    for (xb, ob) in x.chunks(input).zip(out.chunks_mut(output)) {
        for (o, slot) in ob.iter_mut().enumerate() {
            let row = &weights[o * input..(o + 1) * input];
            *slot = bias[o] + row.iter().zip(xb).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], n: usize, mut dropout_rng: Option<&mut dyn RngCore>) -> Forward {
    let mut inputs = Vec::with_capacity(spec.layers().len() + 1);
    let mut caches = Vec::with_capacity(spec.layers().len());
    let mut current = x.to_vec();
    let mut offset = 0;
    let mut width = spec.input_dim();
    for layer in spec.layers() {
        let next = match *layer {
            Layer::Dense { input, output } => {
                let size = input * output + output;
                let out = dense_forward(&current, n, &w[offset..offset + size], input, output);
                offset += size;
                width = output;
                caches.push(Cache::Dense);
                out
            }
            Layer::Relu => {
                caches.push(Cache::Relu);
                current.iter().map(|&v| v.max(0.0)).collect()
            }
            Layer::Dropout { rate } => match dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..current.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    let out = current.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    caches.push(Cache::Dropout(mask));
                    out
                }
                _ => {
                    caches.push(Cache::Dropout(Vec::new()));
                    current.clone()
                }
            },
            Layer::Softmax => {
                let mut out = current.clone();
                softmax_rows(&mut out, width);
                caches.push(Cache::Softmax);
                out
            }
        };
        inputs.push(std::mem::replace(&mut current, next));
    }
    inputs.push(current);
    Forward { inputs, caches }
}

fn per_sample_loss<'a>(probs: &'a [f64], k: usize, labels: &'a [usize]) -> impl Iterator<Item = f64> + 'a {
    probs
        .chunks(k)
        .zip(labels)
        .map(|(p, &y)| -p[y].clamp(PROB_FLOOR, 1.0).ln())
}

/// Class probabilities for every row, dropout disabled.
pub fn predict(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<Vec<f64>> {
    spec.check_params(w)?;
    spec.check_data(data)?;
    let mut fwd = forward(spec, w.as_slice(), data.features(), data.len(), None);
    Ok(fwd.inputs.pop().unwrap_or_default())
}

/// Mean cross-entropy of the softmax outputs, evaluated without dropout.
pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &Dataset) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss needs a non-empty batch"));
    }
    let probs = predict(spec, w, batch)?;
    let total: f64 = per_sample_loss(&probs, spec.num_classes(), batch.labels()).sum();
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient. When `dropout_rng` is given, dropout layers draw
/// their masks from it; otherwise they act as the identity.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Dataset,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient needs a non-empty batch"));
    }
    spec.check_params(w)?;
    spec.check_data(batch)?;
    let n = batch.len();
    let k = spec.num_classes();
    let params = w.as_slice();
    let fwd = forward(spec, params, batch.features(), n, dropout_rng);
    let probs = fwd.inputs.last().expect("forward output");
    let loss = per_sample_loss(probs, k, batch.labels()).sum::<f64>() / n as f64;

    let mut grad = vec![0.0; params.len()];
    let mut offset = params.len();
    let mut delta: Vec<f64> = Vec::new();
    for (i, layer) in spec.layers().iter().enumerate().rev() {
        let input = &fwd.inputs[i];
        match (layer, &fwd.caches[i]) {
            (Layer::Softmax, Cache::Softmax) => {
                // Softmax and cross-entropy are differentiated jointly; a clamped
                // probability makes that sample's loss locally constant.
                delta = vec![0.0; n * k];
                let inv_n = 1.0 / n as f64;
                for ((d, p), &y) in delta.chunks_mut(k).zip(probs.chunks(k)).zip(batch.labels()) {
                    if p[y] < PROB_FLOOR {
                        continue;
                    }
                    for (j, (dj, pj)) in d.iter_mut().zip(p).enumerate() {
                        *dj = (pj - if j == y { 1.0 } else { 0.0 }) * inv_n;
                    }
                }
            }
            (Layer::Relu, Cache::Relu) => {
                for (d, &x) in delta.iter_mut().zip(input) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            (Layer::Dropout { .. }, Cache::Dropout(mask)) => {
                if !mask.is_empty() {
                    for (d, m) in delta.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
            }
            (&Layer::Dense { input: in_dim, output: out_dim }, Cache::Dense) => {
                let size = in_dim * out_dim + out_dim;
                offset -= size;
                let weights = &params[offset..offset + in_dim * out_dim];
                let (gw, gb) = grad[offset..offset + size].split_at_mut(in_dim * out_dim);
                let mut next = vec![0.0; n * in_dim];
                for ((db, xb), nb) in delta.chunks(out_dim).zip(input.chunks(in_dim)).zip(next.chunks_mut(in_dim)) {
                    for (o, &d) in db.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                        let w_row = &weights[o * in_dim..(o + 1) * in_dim];
                        for ((g, x), (nx, wv)) in gw_row.iter_mut().zip(xb).zip(nb.iter_mut().zip(w_row)) {
                            *g += d * x;
                            *nx += d * wv;
                        }
                    }
                }
                delta = next;
            }
            _ => unreachable!("cache matches layer"),
        }
    }
    Ok((loss, ParamVector(grad)))
}

pub fn gradient(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Dataset,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<ParamVector> {
    loss_and_gradient(spec, w, batch, dropout_rng).map(|(_, g)| g)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("accuracy needs a non-empty dataset"));
    }
    let probs = predict(spec, w, data)?;
    let correct = probs
        .chunks(spec.num_classes())
        .zip(data.labels())
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSpec {
        ModelSpec::new(vec![
            Layer::Dense { input: 4, output: 3 },
            Layer::Relu,
            Layer::Dense { input: 3, output: 2 },
            Layer::Softmax,
        ])
        .unwrap()
    }

    #[test]
    fn param_count_and_init() {
        let spec = tiny();
        assert_eq!(spec.param_count(), 23);
        let a = init_params(&spec, 11);
        let b = init_params(&spec, 11);
        assert_eq!(a, b);
        assert_eq!(a.len(), 23);
        // biases sit at [12..15) and [21..23)
        assert!(a.as_slice()[12..15].iter().all(|&v| v == 0.0));
        assert!(a.as_slice()[21..23].iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(a.as_slice()[..12].iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn rejects_bad_specs() {
        let chain = ModelSpec::new(vec![
            Layer::Dense { input: 4, output: 3 },
            Layer::Dense { input: 2, output: 2 },
            Layer::Softmax,
        ]);
        assert!(matches!(chain, Err(Error::InvalidModel(_))));
        let no_softmax = ModelSpec::new(vec![Layer::Dense { input: 4, output: 3 }]);
        assert!(no_softmax.is_err());
        let bad_rate = ModelSpec::new(vec![
            Layer::Dense { input: 4, output: 3 },
            Layer::Dropout { rate: 1.0 },
            Layer::Softmax,
        ]);
        assert!(bad_rate.is_err());
    }

    #[test]
    fn spec_json_is_validated() {
        let ok: ModelSpec = serde_json::from_str(
            r#"{"layers":[{"type":"dense","input":2,"output":2},{"type":"softmax"}]}"#,
        )
        .unwrap();
        assert_eq!(ok.param_count(), 6);
        let bad = serde_json::from_str::<ModelSpec>(
            r#"{"layers":[{"type":"dense","input":2,"output":2},{"type":"relu"}]}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn uniform_output_loss_is_ln_classes() {
        let spec = ModelSpec::mlp(3, 4, 10).unwrap();
        let w = ParamVector::zeros(spec.param_count());
        let data = Dataset::new(vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0], 3, vec![4, 9], 10).unwrap();
        let l = loss(&spec, &w, &data).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let spec = ModelSpec::new(vec![Layer::Dense { input: 1, output: 2 }, Layer::Softmax]).unwrap();
        let w = ParamVector::new(vec![0.0, 0.0, 0.0, 60.0]);
        let data = Dataset::new(vec![1.0], 1, vec![1], 2).unwrap();
        assert!(loss(&spec, &w, &data).unwrap() < 1e-20);
        let wrong = Dataset::new(vec![1.0], 1, vec![0], 2).unwrap();
        // p = e^-60 is clamped to the floor
        assert!((loss(&spec, &w, &wrong).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
        let g = gradient(&spec, &w, &wrong, None).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let spec = tiny();
        let w = init_params(&spec, 3);
        let data = Dataset::new(vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0], 4, vec![0, 1], 2).unwrap();
        let both = loss(&spec, &w, &data).unwrap();
        let a = loss(&spec, &w, &data.subset(&[0])).unwrap();
        let b = loss(&spec, &w, &data.subset(&[1])).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_batches_rejected() {
        let spec = tiny();
        let w = init_params(&spec, 3);
        let empty = Dataset::empty(4, 2);
        assert!(loss(&spec, &w, &empty).is_err());
        assert!(gradient(&spec, &w, &empty, None).is_err());
        assert!(accuracy(&spec, &w, &empty).is_err());
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let spec = tiny();
        let w = init_params(&spec, 5);
        let data = Dataset::new(vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0], 4, vec![0, 1], 2).unwrap();
        let doubled = Dataset::concat([&data, &data]).unwrap();
        let g1 = gradient(&spec, &w, &data, None).unwrap();
        let g2 = gradient(&spec, &w, &doubled, None).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn output_bias_gradients_cancel() {
        let spec = ModelSpec::new(vec![Layer::Dense { input: 2, output: 2 }, Layer::Softmax]).unwrap();
        let w = ParamVector::zeros(6);
        let data = Dataset::new(vec![1.0, -1.0, -1.0, 1.0], 2, vec![0, 1], 2).unwrap();
        let g = gradient(&spec, &w, &data, None).unwrap();
        assert_eq!(g.as_slice()[4] + g.as_slice()[5], 0.0);
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let spec = ModelSpec::new(vec![Layer::Dense { input: 2, output: 2 }, Layer::Softmax]).unwrap();
        // logits = (x0, x1)
        let w = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let data = Dataset::new(vec![2.0, 1.0, 0.0, 3.0, 1.0, 0.0, 5.0, 5.0], 2, vec![0, 1, 1, 0], 2).unwrap();
        assert_eq!(accuracy(&spec, &w, &data).unwrap(), 0.75);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let perm = data.subset(&[3, 1, 0, 2]);
        assert_eq!(accuracy(&spec, &w, &perm).unwrap(), 0.75);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut v = vec![1000.0, -1000.0, 0.0, 1e-3, 2e-3, 3e-3];
        softmax_rows(&mut v, 3);
        for row in v.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
