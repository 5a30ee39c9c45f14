use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled samples stored as a dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("class count must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::InvalidDataset(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {y} at row {i} is outside [0, {num_classes})"
            )));
        }
        Ok(Self { features, dim, labels, num_classes })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Self { features: Vec::new(), dim, labels: Vec::new(), num_classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copies the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, dim: self.dim, labels, num_classes: self.num_classes }
    }

    /// Stacks datasets of equal shape.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or(Error::Empty("no datasets to concatenate"))?;
        let mut out = first.clone();
        for part in iter {
            if part.dim != out.dim || part.num_classes != out.num_classes {
                return Err(Error::InvalidDataset(format!(
                    "cannot stack shape ({}, {} classes) onto ({}, {} classes)",
                    part.dim, part.num_classes, out.dim, out.num_classes
                )));
            }
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
        }
        Ok(out)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn label_frequencies(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.label_counts().into_iter().map(|c| c as f64 / n).collect()
    }
}
