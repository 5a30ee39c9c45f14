use serde::{Deserialize, Serialize};

use super::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::Dataset;

/// Equal-width histogram edges per feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    mins: Vec<f64>,
    maxs: Vec<f64>,
    bins: usize,
}

impl BinEdges {
    /// Edges spanning the per-dimension range of `data`.
    pub fn from_dataset(data: &Dataset, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 bins, got {bins}")));
        }
        if data.is_empty() {
            return Err(Error::Empty("cannot derive bin edges from an empty dataset"));
        }
        let mut mins = vec![f64::INFINITY; data.dim()];
        let mut maxs = vec![f64::NEG_INFINITY; data.dim()];
        for row in data.features().chunks(data.dim()) {
            for (d, &x) in row.iter().enumerate() {
                mins[d] = mins[d].min(x);
                maxs[d] = maxs[d].max(x);
            }
        }
        Ok(Self { mins, maxs, bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Bin of `x` in dimension `d`; values outside the range land in the end bins.
    pub fn bin(&self, d: usize, x: f64) -> usize {
        let (lo, hi) = (self.mins[d], self.maxs[d]);
        if hi <= lo {
            return 0;
        }
        let pos = ((x - lo) / (hi - lo) * self.bins as f64).floor();
        (pos.max(0.0) as usize).min(self.bins - 1)
    }
}

/// Per-dimension empirical marginals and label conditionals of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EmpiricalDistributions {
    pub samples: usize,
    /// P_Y
    pub label_marginal: Vec<f64>,
    /// P_X per dimension: `[dim][bin]`.
    pub feature_marginal: Vec<Vec<f64>>,
    /// P_{Y|X} per dimension and occupied bin: `[dim][bin] -> [class]`.
    pub conditional: Vec<Vec<Option<Vec<f64>>>>,
    /// Directly counted P_{X,Y}: `[dim][bin][class]`.
    pub joint: Vec<Vec<Vec<f64>>>,
}

impl EmpiricalDistributions {
    /// P_{X|Y}(bin | class) for one dimension, or `None` if the class is absent.
    pub fn feature_given_label(&self, dim: usize, class: usize) -> Option<Vec<f64>> {
        let py = self.label_marginal[class];
        if py == 0.0 {
            return None;
        }
        Some(self.joint[dim].iter().map(|b| b[class] / py).collect())
    }
}

pub fn empirical_distributions(ds: &Dataset, bins: usize) -> Result<EmpiricalDistributions> {
    let edges = BinEdges::from_dataset(ds, bins)?;
    empirical_distributions_with(ds, &edges)
}

/// Histograms over externally fixed edges, so several clients can be compared.
pub fn empirical_distributions_with(ds: &Dataset, edges: &BinEdges) -> Result<EmpiricalDistributions> {
    if ds.is_empty() {
        return Err(Error::Empty("distribution of an empty dataset"));
    }
    if edges.dim() != ds.dim() {
        return Err(Error::InvalidConfig(format!(
            "bin edges cover {} dimensions but the dataset has {}",
            edges.dim(),
            ds.dim()
        )));
    }
    let n = ds.len();
    let k = ds.num_classes();
    let mut joint_counts = vec![vec![vec![0usize; k]; edges.bins()]; ds.dim()];
    for (row, &y) in ds.features().chunks(ds.dim()).zip(ds.labels()) {
        for (d, &x) in row.iter().enumerate() {
            joint_counts[d][edges.bin(d, x)][y] += 1;
        }
    }
    let nf = n as f64;
    let mut feature_marginal = Vec::with_capacity(ds.dim());
    let mut conditional = Vec::with_capacity(ds.dim());
    let mut joint = Vec::with_capacity(ds.dim());
    for per_dim in &joint_counts {
        let mut marg = Vec::with_capacity(edges.bins());
        let mut cond = Vec::with_capacity(edges.bins());
        let mut jd = Vec::with_capacity(edges.bins());
        for counts in per_dim {
            let total: usize = counts.iter().sum();
            marg.push(total as f64 / nf);
            cond.push((total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect()));
            jd.push(counts.iter().map(|&c| c as f64 / nf).collect());
        }
        feature_marginal.push(marg);
        conditional.push(cond);
        joint.push(jd);
    }
    Ok(EmpiricalDistributions {
        samples: n,
        label_marginal: ds.label_frequencies(),
        feature_marginal,
        conditional,
        joint,
    })
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkewThresholds {
    pub label_tv: f64,
    pub feature_tv: f64,
    /// Largest tolerated ratio of client sizes max(n_k)/min(n_k).
    pub quantity_ratio: f64,
}

impl Default for SkewThresholds {
    fn default() -> Self {
        Self { label_tv: 0.2, feature_tv: 0.2, quantity_ratio: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkewReport {
    pub client_ids: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Pairwise TV distance between label marginals.
    pub label_tv: Vec<Vec<f64>>,
    /// Pairwise TV distance between feature marginals, averaged over dimensions.
    pub feature_tv: Vec<Vec<f64>>,
    pub max_label_tv: f64,
    pub max_feature_tv: f64,
    pub quantity_ratio: f64,
    pub label_skew: bool,
    pub feature_skew: bool,
    pub quantity_skew: bool,
}

pub fn skew_diagnostics(clients: &[ClientDataset], bins: usize, thresholds: SkewThresholds) -> Result<SkewReport> {
    if clients.len() < 2 {
        return Err(Error::InvalidConfig("skew diagnostics need at least two clients".into()));
    }
    let data: Vec<Dataset> = clients.iter().map(ClientDataset::all).collect();
    let pooled = Dataset::concat(&data)?;
    let edges = BinEdges::from_dataset(&pooled, bins)?;
    let dists = data
        .iter()
        .map(|d| empirical_distributions_with(d, &edges))
        .collect::<Result<Vec<_>>>()?;
    let m = clients.len();
    let mut label_tv = vec![vec![0.0; m]; m];
    let mut feature_tv = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let l = total_variation(&dists[a].label_marginal, &dists[b].label_marginal);
            let f = dists[a]
                .feature_marginal
                .iter()
                .zip(&dists[b].feature_marginal)
                .map(|(p, q)| total_variation(p, q))
                .sum::<f64>()
                / pooled.dim() as f64;
            label_tv[a][b] = l;
            label_tv[b][a] = l;
            feature_tv[a][b] = f;
            feature_tv[b][a] = f;
        }
    }
    let max_of = |m: &Vec<Vec<f64>>| m.iter().flatten().cloned().fold(0.0, f64::max);
    let sizes: Vec<usize> = clients.iter().map(ClientDataset::n_k).collect();
    let quantity_ratio = *sizes.iter().max().unwrap() as f64 / *sizes.iter().min().unwrap() as f64;
    let max_label_tv = max_of(&label_tv);
    let max_feature_tv = max_of(&feature_tv);
    Ok(SkewReport {
        client_ids: clients.iter().map(|c| c.client_id).collect(),
        sizes,
        label_skew: max_label_tv > thresholds.label_tv,
        feature_skew: max_feature_tv > thresholds.feature_tv,
        quantity_skew: quantity_ratio > thresholds.quantity_ratio,
        label_tv,
        feature_tv,
        max_label_tv,
        max_feature_tv,
        quantity_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_one_hot() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0], 1, vec![1, 1, 1], 3).unwrap();
        let d = empirical_distributions(&ds, 2).unwrap();
        assert_eq!(d.label_marginal, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn factorization_holds_on_counts() {
        let ds = Dataset::new(
            vec![0.1, 5.0, 0.4, 2.0, 0.9, 3.0, 0.3, 1.0, 0.8, 4.5, 0.55, 2.2, 0.05, 3.3],
            2,
            vec![0, 1, 2, 0, 1, 2, 2],
            3,
        )
        .unwrap();
        let d = empirical_distributions(&ds, 4).unwrap();
        for dim in 0..2 {
            assert!((d.feature_marginal[dim].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for b in 0..4 {
                match &d.conditional[dim][b] {
                    Some(cond) => {
                        assert!((cond.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        for (c, j) in cond.iter().zip(&d.joint[dim][b]) {
                            assert!((c * d.feature_marginal[dim][b] - j).abs() < 1e-12);
                        }
                    }
                    None => assert_eq!(d.feature_marginal[dim][b], 0.0),
                }
            }
            for y in 0..3 {
                let given = d.feature_given_label(dim, y).unwrap();
                assert!((given.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_empty_and_one_bin() {
        assert!(empirical_distributions(&Dataset::empty(2, 2), 4).is_err());
        let ds = Dataset::new(vec![0.0, 1.0], 1, vec![0, 1], 2).unwrap();
        assert!(empirical_distributions(&ds, 1).is_err());
    }

    #[test]
    fn bins_clamp_at_edges() {
        let ds = Dataset::new(vec![0.0, 10.0], 1, vec![0, 1], 2).unwrap();
        let e = BinEdges::from_dataset(&ds, 5).unwrap();
        assert_eq!(e.bin(0, 0.0), 0);
        assert_eq!(e.bin(0, 10.0), 4);
        assert_eq!(e.bin(0, -3.0), 0);
        assert_eq!(e.bin(0, 99.0), 4);
        assert_eq!(e.bin(0, 4.0), 2);
    }
}
