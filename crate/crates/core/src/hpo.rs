//! Learning-rate optimization under the two regimes: per-client (local)
//! before any federation, and in-federation (global), each driven by grid
//! search or GP-based Bayesian optimization.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::federation::{federated_averaging, Cohort, CommStats, EtaSource, FederationConfig};
use crate::gp::{maximize_ucb, GpState, KernelParams};
use crate::nn::{accuracy, client_update, init_params, ModelSpec, ParamVector, TrainConfig};
use crate::seed::{derive_seed, rng_for};

/// Candidate learning rates, strictly ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid(Vec<f64>);

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Grid::new(values)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.0
    }
}

impl Grid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("grid is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig(format!("grid values {values:?} must be positive")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!("grid values {values:?} must be strictly ascending")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self(vec![1e-4, 1e-3, 1e-2, 1e-1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct BoConfig {
    pub eta_min: f64,
    pub eta_max: f64,
    pub n_init: usize,
    pub n_iter: usize,
    pub ucb_beta: f64,
    pub kernel: KernelParams,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { eta_min: 1e-4, eta_max: 1e-1, n_init: 4, n_iter: 8, ucb_beta: 2.0, kernel: KernelParams::default(), seed: 0 }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_min > 0.0 && self.eta_min < self.eta_max && self.eta_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "search space [{}, {}] must satisfy 0 < min < max",
                self.eta_min, self.eta_max
            )));
        }
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("need at least one initial point".into()));
        }
        if self.ucb_beta.is_nan() || self.ucb_beta < 0.0 {
            return Err(Error::InvalidConfig(format!("UCB beta {} must be non-negative", self.ucb_beta)));
        }
        self.kernel.validate()
    }

    /// The search space in log10(η).
    pub fn log_bounds(&self) -> (f64, f64) {
        (self.eta_min.log10(), self.eta_max.log10())
    }

    /// One uniformly drawn point in each of `n_init` equal strata of log space, ascending.
    pub fn initial_points(&self) -> Vec<f64> {
        let (lo, hi) = self.log_bounds();
        let width = (hi - lo) / self.n_init as f64;
        let mut rng = rng_for(self.seed, "bo-init", 0, 0);
        (0..self.n_init)
            .map(|i| (lo + width * (i as f64 + rng.random::<f64>())).clamp(lo, hi))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Strategy {
    Grid(Grid),
    Bayesian(BoConfig),
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Grid(_) => StrategyKind::Grid,
            Strategy::Bayesian(_) => StrategyKind::Bayesian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Grid(_) => Ok(()),
            Strategy::Bayesian(cfg) => cfg.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Regime {
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StrategyKind {
    Grid,
    Bayesian,
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceEntry {
    /// The client being optimized (local regime only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub client: Option<usize>,
    pub eta: f64,
    /// Validation accuracy, or the unweighted mean over members for the global regime.
    pub accuracy: f64,
    /// Per-member validation accuracies (global regime).
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_client: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HpoResult {
    Global(f64),
    PerClient(BTreeMap<usize, f64>),
}

impl HpoResult {
    pub fn eta_source(&self) -> EtaSource {
        match self {
            HpoResult::Global(eta) => EtaSource::Global(*eta),
            HpoResult::PerClient(map) => EtaSource::PerClient(map.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HpoOutcome {
    pub regime: Regime,
    pub strategy: StrategyKind,
    pub result: HpoResult,
    pub trace: Vec<TraceEntry>,
    /// Model transfers spent during optimization.
    pub comm: CommStats,
}

/// Index of the first maximal score. Candidates evaluated in ascending η
/// order therefore resolve ties toward the smaller learning rate.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Exhaustive evaluation of the grid in ascending order.
pub fn grid_search<F>(grid: &Grid, mut objective: F) -> Result<(f64, Vec<TraceEntry>)>
where
    F: FnMut(usize, f64) -> Result<TraceEntry>,
{
    let trace = grid
        .values()
        .iter()
        .enumerate()
        .map(|(i, &eta)| objective(i, eta))
        .collect::<Result<Vec<_>>>()?;
    if trace.iter().all(|t| t.diverged) {
        log::warn!("every grid candidate diverged; falling back to the smallest learning rate");
    }
    let scores: Vec<f64> = trace.iter().map(|t| t.accuracy).collect();
    let best = select_best(&scores).expect("grid is non-empty");
    Ok((grid.values()[best], trace))
}

/// GP-UCB over log10(η): stratified initial points, then `n_iter` acquisition
/// steps. Returns the best evaluated η (earliest on ties), not the GP optimum.
pub fn bayesian_optimize<F>(cfg: &BoConfig, mut objective: F) -> Result<(f64, Vec<TraceEntry>)>
where
    F: FnMut(usize, f64) -> Result<TraceEntry>,
{
    cfg.validate()?;
    let (lo, hi) = cfg.log_bounds();
    let mut gp = GpState::new(cfg.kernel);
    let mut trace = Vec::with_capacity(cfg.n_init + cfg.n_iter);
    let mut evaluate = |u: f64, gp: &mut GpState, trace: &mut Vec<TraceEntry>| -> Result<()> {
        let eta = 10f64.powf(u).clamp(cfg.eta_min, cfg.eta_max);
        let entry = objective(trace.len(), eta)?;
        gp.observe(u, entry.accuracy);
        trace.push(entry);
        Ok(())
    };
    for u in cfg.initial_points() {
        evaluate(u, &mut gp, &mut trace)?;
    }
    for _ in 0..cfg.n_iter {
        let u = maximize_ucb(&gp, lo, hi, cfg.ucb_beta)?;
        evaluate(u, &mut gp, &mut trace)?;
    }
    let scores: Vec<f64> = trace.iter().map(|t| t.accuracy).collect();
    let best = select_best(&scores).expect("at least one evaluation");
    Ok((trace[best].eta, trace))
}

fn local_objective<'a>(
    spec: &'a ModelSpec,
    client: &'a ClientDataset,
    w0: &'a ParamVector,
    train: &'a TrainConfig,
) -> impl FnMut(usize, f64) -> Result<TraceEntry> + 'a {
    move |_, eta| {
        if client.valid.is_empty() {
            return Err(Error::InvalidDataset(format!("client {} has no validation data", client.client_id)));
        }
        let cfg = TrainConfig { learning_rate: eta, ..train.clone() };
        let (accuracy, diverged) = match client_update(spec, client.client_id, w0, &cfg, &client.train) {
            Ok(t) => (crate::nn::accuracy(spec, &t.params, &client.valid)?, false),
            Err(Error::Diverged { .. }) => (0.0, true),
            Err(e) => return Err(e),
        };
        Ok(TraceEntry { client: Some(client.client_id), eta, accuracy, per_client: BTreeMap::new(), diverged })
    }
}

/// Grid search on one client: train from `w0` with each η, score on its validation split.
pub fn grid_search_local(
    spec: &ModelSpec,
    client: &ClientDataset,
    w0: &ParamVector,
    grid: &Grid,
    train: &TrainConfig,
) -> Result<(f64, Vec<TraceEntry>)> {
    grid_search(grid, local_objective(spec, client, w0, train))
}

pub fn bayesian_local(
    spec: &ModelSpec,
    client: &ClientDataset,
    w0: &ParamVector,
    cfg: &BoConfig,
    train: &TrainConfig,
) -> Result<(f64, Vec<TraceEntry>)> {
    bayesian_optimize(cfg, local_objective(spec, client, w0, train))
}

/// Per-client optimization from one shared `w0`, with no federation. Each
/// client costs one model broadcast. `train.epochs` should already be the
/// local budget E_global·R.
pub fn local_hpo(
    strategy: &Strategy,
    clients: &[ClientDataset],
    spec: &ModelSpec,
    w0: &ParamVector,
    train: &TrainConfig,
) -> Result<HpoOutcome> {
    strategy.validate()?;
    train.validate()?;
    let per_client = clients
        .par_iter()
        .map(|c| match strategy {
            Strategy::Grid(grid) => grid_search_local(spec, c, w0, grid, train),
            Strategy::Bayesian(cfg) => bayesian_local(spec, c, w0, cfg, train),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut result = BTreeMap::new();
    let mut trace = Vec::new();
    for (c, (eta, t)) in clients.iter().zip(per_client) {
        result.insert(c.client_id, eta);
        trace.extend(t);
    }
    Ok(HpoOutcome {
        regime: Regime::Local,
        strategy: strategy.kind(),
        result: HpoResult::PerClient(result),
        trace,
        comm: CommStats { model_broadcasts: clients.len(), client_updates: 0, aggregation_rounds: 0 },
    })
}

/// Starting weights for each global-regime candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum InitialWeights {
    /// Every candidate starts from the same vector.
    Shared(ParamVector),
    /// Candidate `i` starts from `init_params(spec, derive_seed(seed, "candidate-init", 0, i))`.
    PerCandidate { seed: u64 },
}

impl InitialWeights {
    pub fn for_candidate(&self, spec: &ModelSpec, index: usize) -> ParamVector {
        match self {
            InitialWeights::Shared(w) => w.clone(),
            InitialWeights::PerCandidate { seed } => {
                init_params(spec, derive_seed(*seed, "candidate-init", 0, index as u64))
            }
        }
    }
}

/// Optimization inside the federation: every candidate η runs a full FedAvg
/// and is scored by the unweighted mean of member validation accuracies.
pub fn global_hpo(
    strategy: &Strategy,
    cohort: &Cohort,
    clients: &[ClientDataset],
    spec: &ModelSpec,
    fed: &FederationConfig,
    init: &InitialWeights,
) -> Result<HpoOutcome> {
    strategy.validate()?;
    let by_id: BTreeMap<usize, &ClientDataset> = clients.iter().map(|c| (c.client_id, c)).collect();
    let mut comm = CommStats::default();
    let objective = |index: usize, eta: f64| -> Result<TraceEntry> {
        let cfg = FederationConfig { eta: EtaSource::Global(eta), ..fed.clone() };
        let run = federated_averaging(cohort, &cfg, spec, clients, &init.for_candidate(spec, index))?;
        comm += run.comm;
        let mut per_client = BTreeMap::new();
        for &k in cohort.members() {
            let c = by_id[&k];
            if c.valid.is_empty() {
                return Err(Error::InvalidDataset(format!("client {k} has no validation data")));
            }
            per_client.insert(k, accuracy(spec, &run.params, &c.valid)?);
        }
        let mean = per_client.values().sum::<f64>() / per_client.len() as f64;
        let diverged = run.logs.iter().all(|l| l.diverged.len() == l.participants.len());
        Ok(TraceEntry { client: None, eta, accuracy: mean, per_client, diverged })
    };
    let (eta, trace) = match strategy {
        Strategy::Grid(grid) => grid_search(grid, objective)?,
        Strategy::Bayesian(cfg) => bayesian_optimize(cfg, objective)?,
    };
    Ok(HpoOutcome { regime: Regime::Global, strategy: strategy.kind(), result: HpoResult::Global(eta), trace, comm })
}
