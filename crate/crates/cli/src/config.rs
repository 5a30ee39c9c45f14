//! Experiment configuration: one JSON document, optionally patched by
//! `--set path.to.key=value` overrides and a `--seed` override.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedhpo_core::analysis::Approach;
use fedhpo_core::data::{PartitionScheme, SplitRatios, SyntheticSpec};
use fedhpo_core::hpo::{BoConfig, Grid, Regime, StrategyKind};
use fedhpo_core::nn::{DropoutMode, Layer, ModelSpec};
use fedhpo_core::seed::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    /// clientId → cohortId. Absent means one cohort holding every client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohorts: Option<BTreeMap<usize, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federation: Option<FederationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpo: Option<HpoBlock>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Exactly one source; JSON paths are relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticBlock),
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SyntheticBlock {
    pub num_classes: usize,
    /// Per class and per client.
    pub samples_per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_dim() -> usize {
    24
}

fn default_separation() -> f64 {
    0.75
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PartitionConfig {
    pub scheme: PartitionScheme,
    pub clients: usize,
    #[serde(default)]
    pub split: SplitRatios,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ModelPreset {
    /// dense-64, ReLU, dropout 0.4, dense to the class count, dropout 0.4, softmax.
    Industrial,
    /// One ReLU hidden layer of `hidden` units.
    Mlp,
}

/// Either a preset sized from the data or an explicit layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<ModelPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<Layer>>,
}

impl ModelConfig {
    pub fn build(&self, input_dim: usize, num_classes: usize) -> CliResult<ModelSpec> {
        let spec = match (&self.preset, &self.layers) {
            (Some(ModelPreset::Industrial), None) => ModelSpec::industrial(input_dim, num_classes)?,
            (Some(ModelPreset::Mlp), None) => ModelSpec::mlp(input_dim, self.hidden.unwrap_or(64), num_classes)?,
            (None, Some(layers)) => ModelSpec::new(layers.clone())?,
            _ => return Err(CliError::config("config.model", "model needs exactly one of `preset` or `layers`")),
        };
        if spec.input_dim() != input_dim || spec.num_classes() != num_classes {
            return Err(CliError::config(
                "config.model",
                format!(
                    "model maps {} features to {} classes but the data has {input_dim} features and {num_classes} classes",
                    spec.input_dim(),
                    spec.num_classes()
                ),
            ));
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FederationBlock {
    pub rounds: usize,
    #[serde(default = "one")]
    pub client_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for the baseline comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub dropout: DropoutMode,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Overrides applied to the federation block when training the final models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainingOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl FederationBlock {
    pub fn with(&self, o: &TrainingOverride) -> FederationBlock {
        FederationBlock {
            rounds: o.rounds.unwrap_or(self.rounds),
            client_fraction: o.client_fraction.unwrap_or(self.client_fraction),
            epochs: o.epochs.unwrap_or(self.epochs),
            batch_size: o.batch_size.unwrap_or(self.batch_size),
            ..self.clone()
        }
    }
}

/// Local epoch budget: a fixed count, or the global budget E·R.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LocalEpochRule {
    #[default]
    Derived,
    Explicit(usize),
}

impl LocalEpochRule {
    pub fn epochs(self, fed: &FederationBlock) -> usize {
        match self {
            LocalEpochRule::Derived => fed.epochs * fed.rounds,
            LocalEpochRule::Explicit(e) => e,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GlobalInit {
    /// Fresh weights for every candidate, seeded by candidate index.
    #[default]
    PerCandidate,
    /// Every candidate starts from the run's initial weights.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct HpoBlock {
    #[serde(default = "both_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default = "both_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default)]
    pub grid: Grid,
    /// Its `seed` is replaced by one derived from the master seed.
    #[serde(default)]
    pub bayesian: BoConfig,
    #[serde(default)]
    pub local_epoch_rule: LocalEpochRule,
    #[serde(default)]
    pub global_init: GlobalInit,
    #[serde(default)]
    pub posterior: TrainingOverride,
}

fn both_regimes() -> Vec<Regime> {
    vec![Regime::Global, Regime::Local]
}

fn both_strategies() -> Vec<StrategyKind> {
    vec![StrategyKind::Grid, StrategyKind::Bayesian]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Absent means the four regime/strategy comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(Approach, Approach)>>,
    #[serde(default)]
    pub exclude: Vec<usize>,
    /// Result CSVs or run artifacts to analyze, relative to the config file.
    #[serde(default)]
    pub results: Vec<PathBuf>,
}

pub fn default_pairs() -> Vec<(Approach, Approach)> {
    use Approach::*;
    vec![(GlobalGrid, LocalGrid), (GlobalBayes, LocalBayes), (GlobalGrid, GlobalBayes), (LocalGrid, LocalBayes)]
}

impl AnalysisBlock {
    pub fn pairs(&self) -> Vec<(Approach, Approach)> {
        self.pairs.clone().unwrap_or_else(default_pairs)
    }
}

/// Sub-seeds handed to each stage.
pub struct Seeds {
    pub master: u64,
}

impl Seeds {
    pub fn dataset(&self) -> u64 {
        derive_seed(self.master, "dataset", 0, 0)
    }
    pub fn partition(&self) -> u64 {
        derive_seed(self.master, "partition", 0, 0)
    }
    pub fn model_init(&self) -> u64 {
        derive_seed(self.master, "model-init", 0, 0)
    }
    pub fn training(&self) -> u64 {
        derive_seed(self.master, "training", 0, 0)
    }
    pub fn bayesian(&self, cohort: usize) -> u64 {
        derive_seed(self.master, "bayesian", cohort as u64, 0)
    }
    pub fn candidates(&self, cohort: usize) -> u64 {
        derive_seed(self.master, "candidate-init", cohort as u64, 0)
    }
}

/// A parsed configuration plus everything needed to reproduce it.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    /// The config file exactly as read.
    pub raw: String,
    pub overrides: Vec<String>,
    pub config: ExperimentConfig,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn seeds(&self) -> Seeds {
        Seeds { master: self.config.seed }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match (&self.config.dataset, &self.config.partition) {
            (Some(DatasetSource::Synthetic(s)), Some(p)) => Some(SyntheticSpec {
                num_classes: s.num_classes,
                clients: p.clients,
                samples_per_class: s.samples_per_class,
                dim: s.dim,
                separation: s.separation,
                seed: self.seeds().dataset(),
            }),
            _ => None,
        }
    }

    pub fn require<'a, T>(&self, field: Option<&'a T>, name: &str) -> CliResult<&'a T> {
        field.ok_or_else(|| CliError::config("config.missing", format!("config has no `{name}` block")))
    }
}

/// Sets `path` (dot-separated; numeric segments index arrays) to `value`,
/// which is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config("config.override", format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config("config.override", format!("override path `{path}` has an empty segment")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .ok()
                    .filter(|&j| j < items.len())
                    .ok_or_else(|| CliError::config("config.override", format!("`{key}` in `{path}` is not a valid index")))?;
                &mut items[idx]
            }
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => {
                return Err(CliError::config(
                    "config.override",
                    format!("cannot descend into `{key}` of `{path}`: parent is not an object"),
                ))
            }
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    unreachable!("non-empty path")
}

pub fn parse_config(raw: &str, name: &str, overrides: &[String], seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut doc: Value = serde_json::from_str(raw).map_err(|e| CliError::config("config.parse", format!("{name}: {e}")))?;
    if !doc.is_object() {
        return Err(CliError::config("config.parse", format!("{name}: top level must be an object")));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = seed {
        doc["seed"] = Value::from(seed);
    }
    serde_json::from_value(doc).map_err(|e| CliError::config("config.invalid", format!("{name}: {e}")))
}

pub fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> CliResult<LoadedConfig> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::config("config.read", format!("cannot read {}: {e}", path.display())))?;
    let config = parse_config(&raw, &path.display().to_string(), overrides, seed)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedConfig { raw, overrides: overrides.to_vec(), config, base_dir };
    validate(&loaded)?;
    Ok(loaded)
}

fn exists(loaded: &LoadedConfig, p: &Path, what: &str) -> CliResult<()> {
    let full = loaded.resolve(p);
    if !full.exists() {
        return Err(CliError::config("config.missing-path", format!("{what} {} does not exist", full.display())));
    }
    Ok(())
}

/// Load-time checks: referenced files exist and the cohort map covers every client.
pub fn validate(loaded: &LoadedConfig) -> CliResult<()> {
    let cfg = &loaded.config;
    match &cfg.dataset {
        Some(DatasetSource::Idx { images, labels }) => {
            exists(loaded, images, "IDX image file")?;
            exists(loaded, labels, "IDX label file")?;
        }
        Some(DatasetSource::Csv { path }) => exists(loaded, path, "dataset CSV")?,
        Some(DatasetSource::Synthetic(_)) | None => {}
    }
    if let Some(p) = &cfg.partition {
        if p.clients < 2 {
            return Err(CliError::config("config.invalid", format!("partition needs at least 2 clients, got {}", p.clients)));
        }
        p.split.validate()?;
        if let PartitionScheme::Explicit { file, .. } = &p.scheme {
            exists(loaded, file, "assignment file")?;
        }
        if let Some(map) = &cfg.cohorts {
            let clients: Vec<usize> = map.keys().copied().collect();
            if clients != (0..p.clients).collect::<Vec<_>>() {
                return Err(CliError::config(
                    "config.cohorts",
                    format!("cohort map must assign exactly clients 0..{}; it lists {clients:?}", p.clients),
                ));
            }
        }
    }
    if cfg.dataset.is_some() && cfg.partition.is_none() {
        return Err(CliError::config("config.missing", "a dataset needs a `partition` block"));
    }
    for r in &cfg.analysis.results {
        exists(loaded, r, "results file")?;
    }
    if let Some(hpo) = &cfg.hpo {
        hpo.bayesian.validate()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_patch_nested_paths() {
        let mut doc = json!({"federation": {"rounds": 10}, "hpo": {"grid": [0.1, 0.2]}});
        apply_override(&mut doc, "federation.rounds=3").unwrap();
        apply_override(&mut doc, "hpo.grid.1=0.5").unwrap();
        apply_override(&mut doc, "name=smoke").unwrap();
        apply_override(&mut doc, "model.hidden=8").unwrap();
        assert_eq!(doc, json!({"federation": {"rounds": 3}, "hpo": {"grid": [0.1, 0.5]}, "name": "smoke", "model": {"hidden": 8}}));
    }

    #[test]
    fn malformed_overrides_are_config_errors() {
        let mut doc = json!({"a": [1], "b": 2});
        for bad in ["noequals", "a.5=1", "a.x=1", "b.c=1", "a..b=1"] {
            let e = apply_override(&mut doc, bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}");
            assert_eq!(e.code, "config.override", "{bad}");
        }
    }

    #[test]
    fn seed_flag_replaces_config_seed() {
        let cfg = parse_config(r#"{"seed": 4}"#, "t", &[], Some(11)).unwrap();
        assert_eq!(cfg.seed, 11);
        let cfg = parse_config(r#"{"seed": 4}"#, "t", &["seed=5".into()], None).unwrap();
        assert_eq!(cfg.seed, 5);
    }

    #[test]
    fn derived_local_epochs_are_rounds_times_epochs() {
        let fed: FederationBlock =
            serde_json::from_value(json!({"rounds": 10, "epochs": 1, "batchSize": 128})).unwrap();
        assert_eq!(LocalEpochRule::Derived.epochs(&fed), 10);
        assert_eq!(LocalEpochRule::Explicit(3).epochs(&fed), 3);
        let five = FederationBlock { epochs: 5, ..fed.clone() };
        assert_eq!(LocalEpochRule::default().epochs(&five), 50);
    }

    #[test]
    fn model_needs_exactly_one_shape() {
        let none = ModelConfig { preset: None, hidden: None, layers: None };
        assert_eq!(none.build(4, 3).unwrap_err().exit_code(), 2);
        let mlp = ModelConfig { preset: Some(ModelPreset::Mlp), hidden: None, layers: None };
        assert_eq!(mlp.build(4, 3).unwrap().param_count(), 4 * 64 + 64 + 64 * 3 + 3);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = parse_config(r#"{"federation": {"rounds": 1, "epochs": 1, "batchSize": 2, "lr": 0.1}}"#, "t", &[], None)
            .unwrap_err();
        assert_eq!(e.code, "config.invalid");
    }
}
