use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Dataset;
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, valid: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.train <= 0.0 {
            return Err(Error::InvalidConfig(format!("split ratios {parts:?} must be non-negative with train > 0")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios {parts:?} must sum to 1")));
        }
        Ok(())
    }

    /// (train, valid, test) sample counts for `n` samples.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64 * self.train).round() as usize).min(n);
        let valid = ((n as f64 * self.valid).round() as usize).min(n - train);
        (train, valid, n - train - valid)
    }
}

/// Affine per-client feature distortion: an optional rotation in a seeded
/// 2-D coordinate plane, then `x * scale + offset` on every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureTransform {
    #[serde(default)]
    pub rotation_seed: Option<u64>,
    /// The rotation angle is drawn uniformly from `[-max_angle, max_angle]`.
    #[serde(default = "default_max_angle")]
    pub max_angle: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn default_max_angle() -> f64 {
    PI
}

fn one() -> f64 {
    1.0
}

impl Default for FeatureTransform {
    fn default() -> Self {
        Self { rotation_seed: None, max_angle: PI, scale: 1.0, offset: 0.0 }
    }
}

impl FeatureTransform {
    pub fn is_identity(&self) -> bool {
        self.rotation_seed.is_none() && self.scale == 1.0 && self.offset == 0.0
    }

    fn apply(&self, ds: &mut Dataset) -> Result<()> {
        let dim = ds.dim();
        if let Some(seed) = self.rotation_seed {
            if dim < 2 {
                return Err(Error::InvalidConfig("rotation needs at least two feature dimensions".into()));
            }
            let mut rng = rng_for(seed, "rotation", 0, 0);
            let i = rng.random_range(0..dim);
            let j = (i + rng.random_range(1..dim)) % dim;
            let theta = rng.random_range(-self.max_angle..=self.max_angle);
            let (s, c) = theta.sin_cos();
            for row in ds.features_mut().chunks_mut(dim) {
                let (a, b) = (row[i], row[j]);
                row[i] = c * a - s * b;
                row[j] = s * a + c * b;
            }
        }
        if self.scale != 1.0 || self.offset != 0.0 {
            for v in ds.features_mut() {
                *v = *v * self.scale + self.offset;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSkew {
    /// One transform per client.
    Explicit { transforms: Vec<FeatureTransform> },
    /// Seeded transforms: angle up to `strength * π/4`, scale in
    /// `1 ± 0.25·strength`, offset in `±0.5·strength`.
    Random { strength: f64 },
}

impl FeatureSkew {
    fn transforms(&self, clients: usize, seed: u64) -> Result<Vec<FeatureTransform>> {
        match self {
            FeatureSkew::Explicit { transforms } => {
                if transforms.len() != clients {
                    return Err(Error::InvalidConfig(format!(
                        "{} feature transforms given for {clients} clients",
                        transforms.len()
                    )));
                }
                Ok(transforms.clone())
            }
            FeatureSkew::Random { strength } => {
                if !(strength.is_finite() && *strength >= 0.0) {
                    return Err(Error::InvalidConfig(format!("feature-skew strength {strength} must be non-negative")));
                }
                Ok((0..clients)
                    .map(|k| {
                        let mut rng = rng_for(seed, "feature-skew", k as u64, 0);
                        let s = *strength;
                        FeatureTransform {
                            rotation_seed: Some(rng.random()),
                            max_angle: s * PI / 4.0,
                            scale: 1.0 + 0.25 * s * rng.random_range(-1.0..=1.0),
                            offset: 0.5 * s * rng.random_range(-1.0..=1.0),
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum PartitionScheme {
    Iid,
    #[serde(rename_all = "camelCase")]
    LabelSkew { classes_per_client: usize },
    QuantitySkew { proportions: Vec<f64> },
    FeatureSkew(FeatureSkew),
    /// Per-sample client assignment read from a `sampleIndex,clientId` CSV.
    /// `labelMaps` relabels a client's samples (old class → new class),
    /// producing "same features, different label" clients.
    #[serde(rename_all = "camelCase")]
    Explicit {
        file: PathBuf,
        #[serde(default)]
        label_maps: BTreeMap<usize, Vec<usize>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(scheme: PartitionScheme, clients: usize, seed: u64) -> Self {
        Self { scheme, clients, split: SplitRatios::default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 clients, got {}", self.clients)));
        }
        self.split.validate()
    }
}

/// Source-row indices of each split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.valid).chain(&self.test).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub source: SplitIndices,
}

impl ClientDataset {
    /// Sample count over all three splits.
    pub fn n_k(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn all(&self) -> Dataset {
        Dataset::concat([&self.train, &self.valid, &self.test]).expect("splits share a shape")
    }
}

/// Shuffles one client's rows with its own stream and cuts train/valid/test.
fn build_client(data: &Dataset, client_id: usize, mut rows: Vec<usize>, spec: &PartitionSpec) -> ClientDataset {
    rows.shuffle(&mut rng_for(spec.seed, "client-split", client_id as u64, 0));
    let (n_train, n_valid, _) = spec.split.counts(rows.len());
    let test = rows.split_off(n_train + n_valid);
    let valid = rows.split_off(n_train);
    let source = SplitIndices { train: rows, valid, test };
    ClientDataset {
        client_id,
        train: data.subset(&source.train),
        valid: data.subset(&source.valid),
        test: data.subset(&source.test),
        source,
    }
}

fn shuffled_rows(n: usize, seed: u64) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng_for(seed, "global-shuffle", 0, 0));
    rows
}

/// Seeded global shuffle cut into equal contiguous slices; the last client takes the remainder.
pub fn partition_iid(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    let k = spec.clients;
    if data.len() < k {
        return Err(Error::InvalidDataset(format!("{} samples cannot cover {k} clients", data.len())));
    }
    let rows = shuffled_rows(data.len(), spec.seed);
    let per = data.len() / k;
    Ok((0..k)
        .map(|c| {
            let end = if c + 1 == k { rows.len() } else { (c + 1) * per };
            build_client(data, c, rows[c * per..end].to_vec(), spec)
        })
        .collect())
}

/// Each client holds exactly `classes_per_client` classes, claimed round-robin
/// over a seeded class order. A class's samples are divided evenly between
/// its claimants.
pub fn partition_label_skew(data: &Dataset, spec: &PartitionSpec, classes_per_client: usize) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    let classes = data.num_classes();
    let k = spec.clients;
    if classes_per_client == 0 || classes_per_client > classes {
        return Err(Error::InvalidConfig(format!(
            "classes per client {classes_per_client} must lie in [1, {classes}]"
        )));
    }
    if k * classes_per_client < classes {
        return Err(Error::InvalidConfig(format!(
            "{k} clients × {classes_per_client} classes leave some of the {classes} classes unassigned"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(format!("class {empty} has no samples")));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng_for(spec.seed, "class-order", 0, 0));

    let mut claimants: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for client in 0..k {
        for j in 0..classes_per_client {
            claimants[order[(client * classes_per_client + j) % classes]].push(client);
        }
    }
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (class, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(&mut rng_for(spec.seed, "class-shard", class as u64, 0));
        let owners = &claimants[class];
        let per = members.len() / owners.len();
        for (o, &client) in owners.iter().enumerate() {
            let end = if o + 1 == owners.len() { members.len() } else { (o + 1) * per };
            rows[client].extend_from_slice(&members[o * per..end]);
        }
    }
    if let Some(empty) = rows.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(format!("client {empty} received no samples")));
    }
    Ok(rows.into_iter().enumerate().map(|(c, r)| build_client(data, c, r, spec)).collect())
}

/// Client `k` receives `⌊p_k·N⌋` rows of a seeded shuffle; the last client also takes the remainder.
pub fn partition_quantity_skew(data: &Dataset, spec: &PartitionSpec, proportions: &[f64]) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    if proportions.len() != spec.clients {
        return Err(Error::InvalidConfig(format!(
            "{} proportions given for {} clients",
            proportions.len(),
            spec.clients
        )));
    }
    if let Some(p) = proportions.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::InvalidConfig(format!("proportion {p} must be positive")));
    }
    if (proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig("proportions must sum to 1".into()));
    }
    let n = data.len();
    let rows = shuffled_rows(n, spec.seed);
    let mut start = 0;
    let mut clients = Vec::with_capacity(proportions.len());
    for (c, p) in proportions.iter().enumerate() {
        let take = if c + 1 == proportions.len() {
            n - start
        } else {
            ((p * n as f64 + 1e-9).floor() as usize).min(n - start)
        };
        if take == 0 {
            return Err(Error::InvalidDataset(format!("client {c} received no samples")));
        }
        clients.push(build_client(data, c, rows[start..start + take].to_vec(), spec));
        start += take;
    }
    Ok(clients)
}

/// An i.i.d. split whose clients each see their features through their own affine transform.
pub fn partition_feature_skew(data: &Dataset, spec: &PartitionSpec, skew: &FeatureSkew) -> Result<Vec<ClientDataset>> {
    let transforms = skew.transforms(spec.clients, spec.seed)?;
    if data.dim() < 2 && transforms.iter().any(|t| t.rotation_seed.is_some()) {
        return Err(Error::InvalidConfig("rotation needs at least two feature dimensions".into()));
    }
    let mut clients = partition_iid(data, spec)?;
    for (client, t) in clients.iter_mut().zip(&transforms) {
        for split in [&mut client.train, &mut client.valid, &mut client.test] {
            t.apply(split)?;
        }
    }
    Ok(clients)
}

/// `assignment[i]` is the client of row `i`. Every row must be assigned and
/// client ids must be `0..clients`.
pub fn partition_explicit(
    data: &Dataset,
    spec: &PartitionSpec,
    assignment: &[usize],
    label_maps: &BTreeMap<usize, Vec<usize>>,
) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    if assignment.len() != data.len() {
        return Err(Error::InvalidConfig(format!(
            "assignment covers {} rows but the dataset has {}",
            assignment.len(),
            data.len()
        )));
    }
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
    for (i, &c) in assignment.iter().enumerate() {
        rows.get_mut(c)
            .ok_or_else(|| Error::InvalidConfig(format!("row {i} assigned to unknown client {c}")))?
            .push(i);
    }
    if let Some(empty) = rows.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(format!("client {empty} received no samples")));
    }
    let mut clients: Vec<ClientDataset> =
        rows.into_iter().enumerate().map(|(c, r)| build_client(data, c, r, spec)).collect();
    for (&client, map) in label_maps {
        let target = clients
            .get_mut(client)
            .ok_or_else(|| Error::InvalidConfig(format!("label map for unknown client {client}")))?;
        let classes = data.num_classes();
        if map.len() != classes || map.iter().any(|&y| y >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label map for client {client} must list a class in [0, {classes}) for each of the {classes} classes"
            )));
        }
        for split in [&mut target.train, &mut target.valid, &mut target.test] {
            for y in split.labels_mut() {
                *y = map[*y];
            }
        }
    }
    Ok(clients)
}

/// Dispatches on `spec.scheme`.
pub fn partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientDataset>> {
    match &spec.scheme {
        PartitionScheme::Iid => partition_iid(data, spec),
        PartitionScheme::LabelSkew { classes_per_client } => partition_label_skew(data, spec, *classes_per_client),
        PartitionScheme::QuantitySkew { proportions } => partition_quantity_skew(data, spec, proportions),
        PartitionScheme::FeatureSkew(skew) => partition_feature_skew(data, spec, skew),
        PartitionScheme::Explicit { file, label_maps } => {
            let assignment = super::load_assignment(file)?;
            partition_explicit(data, spec, &assignment, label_maps)
        }
    }
}
