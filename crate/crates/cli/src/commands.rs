use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedhpo_core::analysis::{compare_approaches, render_comparisons, Approach, Comparison, ResultRow, ResultTable};
use fedhpo_core::data::{
    generate_synthetic, load_csv, load_idx, partition, skew_diagnostics, write_csv, ClientDataset, PartitionScheme,
    PartitionSpec, SkewReport, SkewThresholds,
};
use fedhpo_core::federation::{cohorts_from_map, federated_averaging, pooled_test, run_baselines, Cohort, EtaSource, FederationConfig};
use fedhpo_core::hpo::{global_hpo, local_hpo, InitialWeights, Regime, Strategy, StrategyKind};
use fedhpo_core::nn::{accuracy, init_params, Dataset, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::artifact::{ArtifactKind, CohortOutcome, RunArtifact, Timing};
use crate::config::{DatasetSource, FederationBlock, GlobalInit, LoadedConfig};
use crate::error::{CliError, CliResult, Context};

const DIAGNOSTIC_BINS: usize = 10;

pub const REPORT_HEADER: &str = "clientId,cohortId,approach,accuracy,learningRate";

/// Loaded data split into clients and grouped into cohorts.
pub struct Prepared {
    pub dataset: Dataset,
    pub clients: Vec<ClientDataset>,
    pub cohorts: Vec<Cohort>,
    pub cohort_of: BTreeMap<usize, usize>,
}

impl Prepared {
    pub fn members(&self, cohort: &Cohort) -> Vec<ClientDataset> {
        cohort.members().iter().map(|&k| self.clients[k].clone()).collect()
    }
}

pub fn prepare(loaded: &LoadedConfig) -> CliResult<Prepared> {
    let cfg = &loaded.config;
    let source = loaded.require(cfg.dataset.as_ref(), "dataset")?;
    let part = loaded.require(cfg.partition.as_ref(), "partition")?;
    let dataset = match source {
        DatasetSource::Synthetic(_) => {
            let spec = loaded.synthetic_spec().expect("synthetic source with a partition block");
            generate_synthetic(&spec).context("generating synthetic data")?.dataset
        }
        DatasetSource::Idx { images, labels } => {
            load_idx(&loaded.resolve(images), &loaded.resolve(labels)).context("loading IDX data")?
        }
        DatasetSource::Csv { path } => load_csv(&loaded.resolve(path)).context("loading CSV data")?,
    };
    let scheme = match &part.scheme {
        PartitionScheme::Explicit { file, label_maps } => {
            PartitionScheme::Explicit { file: loaded.resolve(file), label_maps: label_maps.clone() }
        }
        other => other.clone(),
    };
    let spec = PartitionSpec { scheme, clients: part.clients, split: part.split, seed: loaded.seeds().partition() };
    let clients = partition(&dataset, &spec).context("partitioning")?;
    let cohort_of = cfg.cohorts.clone().unwrap_or_else(|| (0..part.clients).map(|k| (k, 0)).collect());
    let cohorts = cohorts_from_map(&cohort_of)?;
    Ok(Prepared { dataset, clients, cohorts, cohort_of })
}

fn model(loaded: &LoadedConfig, data: &Dataset) -> CliResult<ModelSpec> {
    loaded.require(loaded.config.model.as_ref(), "model")?.build(data.dim(), data.num_classes())
}

fn federation(loaded: &LoadedConfig, block: &FederationBlock, eta: EtaSource) -> FederationConfig {
    FederationConfig {
        rounds: block.rounds,
        client_fraction: block.client_fraction,
        epochs: block.epochs,
        batch_size: block.batch_size,
        eta,
        seed: loaded.seeds().training(),
        dropout: block.dropout,
        parallel: block.parallel,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime("io.output", format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::runtime("io.output", format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    out.push(b'\n');
    out
}

fn table_csv(table: &ResultTable) -> Vec<u8> {
    let mut out = Vec::new();
    table.write_csv(&mut out).expect("writing to memory");
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientManifest {
    pub client_id: usize,
    pub cohort_id: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub n_k: usize,
    pub label_marginal: Vec<f64>,
    /// Split name → CSV path relative to the manifest.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartitionManifest {
    pub seed: u64,
    pub num_classes: usize,
    pub dim: usize,
    pub clients: Vec<ClientManifest>,
    pub skew: SkewReport,
}

/// Writes each client split as CSV plus `manifest.json`.
pub fn cmd_partition(loaded: &LoadedConfig, out: &Path) -> CliResult<PartitionManifest> {
    let prep = prepare(loaded)?;
    let skew = skew_diagnostics(&prep.clients, DIAGNOSTIC_BINS, SkewThresholds::default()).context("skew diagnostics")?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut clients = Vec::new();
    for c in &prep.clients {
        let mut paths = BTreeMap::new();
        for (name, split) in [("train", &c.train), ("valid", &c.valid), ("test", &c.test)] {
            let rel = format!("clients/client-{}-{name}.csv", c.client_id);
            let mut bytes = Vec::new();
            write_csv(split, &mut bytes)?;
            files.push((out.join(&rel), bytes));
            paths.insert(name.to_string(), rel);
        }
        clients.push(ClientManifest {
            client_id: c.client_id,
            cohort_id: prep.cohort_of[&c.client_id],
            train: c.train.len(),
            valid: c.valid.len(),
            test: c.test.len(),
            n_k: c.n_k(),
            label_marginal: c.all().label_frequencies(),
            files: paths,
        });
    }
    let manifest = PartitionManifest {
        seed: loaded.config.seed,
        num_classes: prep.dataset.num_classes(),
        dim: prep.dataset.dim(),
        clients,
        skew,
    };
    files.push((out.join("manifest.json"), json(&manifest)));
    for (path, bytes) in files {
        write_file(&path, &bytes)?;
    }
    Ok(manifest)
}

pub fn approach_for(regime: Regime, strategy: StrategyKind) -> Approach {
    match (regime, strategy) {
        (Regime::Global, StrategyKind::Grid) => Approach::GlobalGrid,
        (Regime::Local, StrategyKind::Grid) => Approach::LocalGrid,
        (Regime::Global, StrategyKind::Bayesian) => Approach::GlobalBayes,
        (Regime::Local, StrategyKind::Bayesian) => Approach::LocalBayes,
    }
}

fn ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

/// Every configured regime × strategy on every cohort, then a federated model
/// trained with the selected learning rates and scored on the pooled cohort
/// test split.
pub fn cmd_hpo(loaded: &LoadedConfig, out: &Path) -> CliResult<RunArtifact> {
    let started = Instant::now();
    let cfg = &loaded.config;
    let hpo = loaded.require(cfg.hpo.as_ref(), "hpo")?;
    let fed_block = loaded.require(cfg.federation.as_ref(), "federation")?;
    let prep = prepare(loaded)?;
    let spec = model(loaded, &prep.dataset)?;
    let seeds = loaded.seeds();
    let w0 = init_params(&spec, seeds.model_init());
    let final_block = fed_block.with(&hpo.posterior);
    let local_train = TrainConfig {
        learning_rate: 0.0,
        epochs: hpo.local_epoch_rule.epochs(fed_block),
        batch_size: fed_block.batch_size,
        seed: seeds.training(),
        dropout: fed_block.dropout,
        epoch_offset: 0,
    };
    let mut timing = Timing::default();
    let mut outcomes = Vec::new();
    let mut results = ResultTable::new();
    for cohort in &prep.cohorts {
        let members = prep.members(cohort);
        for &regime in &hpo.regimes {
            for &kind in &hpo.strategies {
                let approach = approach_for(regime, kind);
                let label = format!("cohort {} {approach}", cohort.id());
                log::info!("{label}: optimizing");
                let stage = Instant::now();
                let strategy = match kind {
                    StrategyKind::Grid => Strategy::Grid(hpo.grid.clone()),
                    StrategyKind::Bayesian => {
                        Strategy::Bayesian(fedhpo_core::BoConfig { seed: seeds.bayesian(cohort.id()), ..hpo.bayesian.clone() })
                    }
                };
                let outcome = match regime {
                    Regime::Local => local_hpo(&strategy, &members, &spec, &w0, &local_train),
                    Regime::Global => {
                        let init = match hpo.global_init {
                            GlobalInit::PerCandidate => InitialWeights::PerCandidate { seed: seeds.candidates(cohort.id()) },
                            GlobalInit::Shared => InitialWeights::Shared(w0.clone()),
                        };
                        let fed = federation(loaded, fed_block, EtaSource::Global(0.0));
                        global_hpo(&strategy, cohort, &members, &spec, &fed, &init)
                    }
                }
                .context(format!("hpo ({label})"))?;
                let eta = outcome.result.eta_source();
                let final_cfg = federation(loaded, &final_block, eta.clone());
                let run = federated_averaging(cohort, &final_cfg, &spec, &members, &w0).context(format!("final training ({label})"))?;
                let test = pooled_test(cohort, &members)?;
                let test_accuracy = accuracy(&spec, &run.params, &test).context(format!("evaluation ({label})"))?;
                let mut learning_rates = BTreeMap::new();
                for &k in cohort.members() {
                    learning_rates.insert(k, eta.for_client(k)?);
                    results.push(ResultRow { client_id: k, cohort_id: cohort.id(), approach, accuracy: test_accuracy })?;
                }
                log::info!("{label}: learning rates {learning_rates:?}, test accuracy {test_accuracy:.4}");
                timing.stages.insert(label, ms(stage));
                outcomes.push(CohortOutcome {
                    cohort_id: cohort.id(),
                    approach,
                    outcome,
                    learning_rates,
                    round_logs: run.logs,
                    test_accuracy,
                });
            }
        }
    }
    timing.total_ms = ms(started);
    let artifact = RunArtifact {
        kind: ArtifactKind::Hpo,
        config_snapshot: loaded.raw.clone(),
        overrides: loaded.overrides.clone(),
        seed: cfg.seed,
        outcomes,
        baselines: Vec::new(),
        baseline_learning_rate: None,
        results,
        timing,
    };
    write_run(out, &artifact)?;
    Ok(artifact)
}

fn write_run(out: &Path, artifact: &RunArtifact) -> CliResult<()> {
    let stem = artifact.kind.stem();
    write_file(&out.join("config.json"), artifact.config_snapshot.as_bytes())?;
    write_file(&out.join(format!("{stem}-run.json")), &json(artifact))?;
    write_file(&out.join(format!("{stem}-results.csv")), &table_csv(&artifact.results))
}

/// Individual, central and federated training per cohort at the configured
/// learning rate, all scored on the pooled cohort test split.
pub fn cmd_baselines(loaded: &LoadedConfig, out: &Path) -> CliResult<RunArtifact> {
    let started = Instant::now();
    let cfg = &loaded.config;
    let fed_block = loaded.require(cfg.federation.as_ref(), "federation")?;
    let eta = fed_block
        .learning_rate
        .ok_or_else(|| CliError::config("config.missing", "baselines need `federation.learningRate`"))?;
    let block = match &cfg.hpo {
        Some(h) => fed_block.with(&h.posterior),
        None => fed_block.clone(),
    };
    let prep = prepare(loaded)?;
    let spec = model(loaded, &prep.dataset)?;
    let w0 = init_params(&spec, loaded.seeds().model_init());
    let fed = federation(loaded, &block, EtaSource::Global(eta));
    let mut timing = Timing::default();
    let mut reports = Vec::new();
    let mut results = ResultTable::new();
    for cohort in &prep.cohorts {
        let stage = Instant::now();
        let members = prep.members(cohort);
        let report = run_baselines(cohort, &fed, &spec, &members, &w0).context(format!("baselines (cohort {})", cohort.id()))?;
        for row in &report.rows {
            for (approach, accuracy) in [
                (Approach::Individual, row.individual),
                (Approach::Central, row.central),
                (Approach::Federated, row.federated),
            ] {
                results.push(ResultRow { client_id: row.client_id, cohort_id: cohort.id(), approach, accuracy })?;
            }
        }
        log::info!(
            "cohort {}: individual {:.4}, central {:.4}, federated {:.4}",
            cohort.id(),
            report.mean_individual(),
            report.central(),
            report.federated()
        );
        timing.stages.insert(format!("cohort {}", cohort.id()), ms(stage));
        reports.push(report);
    }
    timing.total_ms = ms(started);
    let artifact = RunArtifact {
        kind: ArtifactKind::Baselines,
        config_snapshot: loaded.raw.clone(),
        overrides: loaded.overrides.clone(),
        seed: cfg.seed,
        outcomes: Vec::new(),
        baselines: reports,
        baseline_learning_rate: Some(eta),
        results,
        timing,
    };
    write_run(out, &artifact)?;
    Ok(artifact)
}

/// Reads a result table from a results CSV or from a run artifact (`.json`).
pub fn read_results(path: &Path) -> CliResult<ResultTable> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(RunArtifact::read(path)?.results);
    }
    let file = fs::File::open(path).map_err(|e| CliError::runtime("io", format!("cannot open {}: {e}", path.display())))?;
    Ok(ResultTable::read_csv(file, &path.display().to_string())?)
}

/// Paired t-tests over the merged inputs; writes `comparisons.json` and `comparisons.txt`.
pub fn cmd_analyze(
    inputs: &[PathBuf],
    pairs: &[(Approach, Approach)],
    exclude: &[usize],
    out: &Path,
) -> CliResult<Vec<Comparison>> {
    if inputs.is_empty() {
        return Err(CliError::config("config.missing", "no result tables to analyze"));
    }
    let mut table = ResultTable::new();
    for p in inputs {
        table.extend(read_results(p)?).context(format!("merging {}", p.display()))?;
    }
    let comparisons = compare_approaches(&table, pairs, exclude)?;
    write_file(&out.join("comparisons.json"), &json(&comparisons))?;
    write_file(&out.join("comparisons.txt"), render_comparisons(&comparisons).as_bytes())?;
    Ok(comparisons)
}

/// Plot-ready CSV of a run artifact with the learning rate behind each row.
pub fn cmd_report(artifact_path: &Path, out: &Path) -> CliResult<PathBuf> {
    let artifact = RunArtifact::read(artifact_path)?;
    let mut csv = Vec::new();
    writeln!(csv, "{REPORT_HEADER}")?;
    for r in artifact.results.rows() {
        let eta = artifact.learning_rate(r.client_id, r.approach).map(|e| e.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{eta}", r.client_id, r.cohort_id, r.approach, r.accuracy)?;
    }
    let name = match artifact.kind {
        ArtifactKind::Baselines => "baselines-report.csv",
        ArtifactKind::Hpo => "approaches-report.csv",
    };
    let path = out.join(name);
    write_file(&path, &csv)?;
    Ok(path)
}
