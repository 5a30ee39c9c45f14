//! FedAvg over a cohort of clients, and the individual / central / federated
//! baseline comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::AddAssign;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{accuracy, client_update, Dataset, DropoutMode, ModelSpec, ParamVector, TrainConfig};
use crate::seed::rng_for;

/// Clients allowed to exchange model updates with each other.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CohortRepr", into = "CohortRepr")]
pub struct Cohort {
    id: usize,
    members: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CohortRepr {
    id: usize,
    members: Vec<usize>,
}

impl TryFrom<CohortRepr> for Cohort {
    type Error = Error;
    fn try_from(r: CohortRepr) -> Result<Self> {
        Cohort::new(r.id, r.members)
    }
}

impl From<Cohort> for CohortRepr {
    fn from(c: Cohort) -> Self {
        CohortRepr { id: c.id, members: c.members }
    }
}

impl Cohort {
    pub fn new(id: usize, members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig(format!("cohort {id} has no members")));
        }
        let unique: BTreeSet<_> = members.iter().collect();
        if unique.len() != members.len() {
            return Err(Error::InvalidConfig(format!("cohort {id} lists a client twice")));
        }
        Ok(Self { id, members })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Groups clients by cohort id; cohorts come out ordered by id, members by client id.
pub fn cohorts_from_map(assignment: &BTreeMap<usize, usize>) -> Result<Vec<Cohort>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&client, &cohort) in assignment {
        groups.entry(cohort).or_default().push(client);
    }
    groups.into_iter().map(|(id, members)| Cohort::new(id, members)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EtaSource {
    Global(f64),
    PerClient(BTreeMap<usize, f64>),
}

impl EtaSource {
    pub fn for_client(&self, client: usize) -> Result<f64> {
        match self {
            EtaSource::Global(eta) => Ok(*eta),
            EtaSource::PerClient(map) => map
                .get(&client)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("no learning rate for client {client}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FederationConfig {
    pub rounds: usize,
    pub client_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: EtaSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dropout: DropoutMode,
    /// Run a round's client updates on the rayon pool. Results are identical either way.
    #[serde(default)]
    pub parallel: bool,
}

impl FederationConfig {
    pub fn new(rounds: usize, client_fraction: f64, epochs: usize, batch_size: usize, eta: EtaSource, seed: u64) -> Self {
        Self { rounds, client_fraction, epochs, batch_size, eta, seed, dropout: DropoutMode::Enabled, parallel: false }
    }

    pub fn validate_for(&self, cohort: &Cohort) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("client fraction {} outside (0, 1]", self.client_fraction)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        for &k in cohort.members() {
            self.eta.for_client(k)?;
        }
        Ok(())
    }

    fn train_config(&self, client: usize, epochs: usize, epoch_offset: usize) -> Result<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: self.eta.for_client(client)?,
            epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            dropout: self.dropout,
            epoch_offset,
        })
    }
}

/// Model transfers between server and clients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommStats {
    /// Server → client model sends.
    pub model_broadcasts: usize,
    /// Client → server update uploads.
    pub client_updates: usize,
    pub aggregation_rounds: usize,
}

impl AddAssign for CommStats {
    fn add_assign(&mut self, rhs: Self) {
        self.model_broadcasts += rhs.model_broadcasts;
        self.client_updates += rhs.client_updates;
        self.aggregation_rounds += rhs.aggregation_rounds;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoundLog {
    pub round: usize,
    pub participants: Vec<usize>,
    /// Mean mini-batch loss over each participant's last local epoch.
    pub train_loss: BTreeMap<usize, f64>,
    /// Participants whose update diverged, with the failing step; they contributed the round-start model.
    pub diverged: BTreeMap<usize, usize>,
    /// Accuracy of the aggregated model on each member's validation split.
    pub validation_accuracy: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedAvgResult {
    pub params: ParamVector,
    pub logs: Vec<RoundLog>,
    pub comm: CommStats,
}

pub fn participant_count(members: usize, fraction: f64) -> usize {
    ((fraction * members as f64 + 1e-9).floor() as usize).clamp(1, members)
}

/// Uniform sampling without replacement of `max(⌊C·|members|⌋, 1)` clients,
/// returned in member order.
pub fn select_clients(cohort: &Cohort, fraction: f64, round_seed: u64) -> Vec<usize> {
    let n = cohort.len();
    let m = participant_count(n, fraction);
    if m == n {
        return cohort.members().to_vec();
    }
    let mut picked = sample(&mut rng_for(round_seed, "select", 0, 0), n, m).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| cohort.members()[i]).collect()
}

/// Size-weighted mean of client models, accumulated in ascending client-id
/// order as a running convex combination.
pub fn aggregate(updates: &[(usize, ParamVector)], sizes: &BTreeMap<usize, usize>) -> Result<ParamVector> {
    let mut ordered: Vec<&(usize, ParamVector)> = updates.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    if ordered.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidConfig("duplicate client in aggregation".into()));
    }
    let (_, first) = *ordered.first().ok_or(Error::Empty("no updates to aggregate"))?;
    let len = first.len();
    let mut acc = first.clone();
    let mut lo = first.clone().into_inner();
    let mut hi = lo.clone();
    let mut seen = 0usize;
    for (id, w) in ordered {
        if w.len() != len {
            return Err(Error::LengthMismatch { expected: len, actual: w.len() });
        }
        let n = *sizes
            .get(id)
            .filter(|&&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("client {id} has no positive sample count")))?;
        seen += n;
        let t = n as f64 / seen as f64;
        for (((a, &x), l), h) in acc.as_mut_slice().iter_mut().zip(w.as_slice()).zip(&mut lo).zip(&mut hi) {
            *a += t * (x - *a);
            *l = l.min(x);
            *h = h.max(x);
        }
    }
    for ((a, l), h) in acc.as_mut_slice().iter_mut().zip(&lo).zip(&hi) {
        *a = a.clamp(*l, *h);
    }
    Ok(acc)
}

fn lookup<'a>(cohort: &Cohort, clients: &'a [ClientDataset]) -> Result<BTreeMap<usize, &'a ClientDataset>> {
    let by_id: BTreeMap<usize, &ClientDataset> = clients.iter().map(|c| (c.client_id, c)).collect();
    cohort
        .members()
        .iter()
        .map(|&k| {
            let c = by_id.get(&k).ok_or_else(|| Error::InvalidConfig(format!("cohort {} member {k} has no data", cohort.id())))?;
            if c.train.is_empty() {
                return Err(Error::InvalidDataset(format!("client {k} has no training data")));
            }
            Ok((k, *c))
        })
        .collect()
}

pub fn federated_averaging(
    cohort: &Cohort,
    cfg: &FederationConfig,
    spec: &ModelSpec,
    clients: &[ClientDataset],
    w0: &ParamVector,
) -> Result<FedAvgResult> {
    cfg.validate_for(cohort)?;
    let data = lookup(cohort, clients)?;
    let sizes: BTreeMap<usize, usize> = data.iter().map(|(&k, c)| (k, c.train.len())).collect();
    let mut w = w0.clone();
    let mut logs = Vec::with_capacity(cfg.rounds);
    let mut comm = CommStats::default();
    for round in 0..cfg.rounds {
        let participants = select_clients(cohort, cfg.client_fraction, crate::seed::derive_seed(cfg.seed, "round", cohort.id() as u64, round as u64));
        let train_one = |&k: &usize| -> Result<(usize, Result<crate::nn::Trained>)> {
            let tc = cfg.train_config(k, cfg.epochs, round * cfg.epochs)?;
            Ok((k, client_update(spec, k, &w, &tc, &data[&k].train)))
        };
        let outcomes: Vec<(usize, Result<crate::nn::Trained>)> = if cfg.parallel {
            participants.par_iter().map(train_one).collect::<Result<_>>()?
        } else {
            participants.iter().map(train_one).collect::<Result<_>>()?
        };
        let mut updates = Vec::with_capacity(outcomes.len());
        let mut train_loss = BTreeMap::new();
        let mut diverged = BTreeMap::new();
        for (k, outcome) in outcomes {
            match outcome {
                Ok(t) => {
                    train_loss.insert(k, t.last_epoch_loss);
                    updates.push((k, t.params));
                }
                Err(Error::Diverged { step }) => {
                    log::debug!("cohort {} round {round}: client {k} diverged at step {step}", cohort.id());
                    diverged.insert(k, step);
                    updates.push((k, w.clone()));
                }
                Err(e) => return Err(e),
            }
        }
        w = aggregate(&updates, &sizes)?;
        comm += CommStats {
            model_broadcasts: participants.len(),
            client_updates: participants.len(),
            aggregation_rounds: 1,
        };
        let mut validation_accuracy = BTreeMap::new();
        for (&k, c) in &data {
            if !c.valid.is_empty() {
                validation_accuracy.insert(k, accuracy(spec, &w, &c.valid)?);
            }
        }
        logs.push(RoundLog { round, participants, train_loss, diverged, validation_accuracy });
    }
    Ok(FedAvgResult { params: w, logs, comm })
}

/// Test accuracy of the three training regimes for one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BaselineRow {
    pub client_id: usize,
    pub individual: f64,
    pub central: f64,
    pub federated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BaselineReport {
    pub cohort_id: usize,
    pub rows: Vec<BaselineRow>,
    pub round_logs: Vec<RoundLog>,
}

impl BaselineReport {
    pub fn mean_individual(&self) -> f64 {
        self.rows.iter().map(|r| r.individual).sum::<f64>() / self.rows.len() as f64
    }

    pub fn central(&self) -> f64 {
        self.rows[0].central
    }

    pub fn federated(&self) -> f64 {
        self.rows[0].federated
    }
}

/// Concatenated test splits of the cohort members, in member order.
pub fn pooled_test(cohort: &Cohort, clients: &[ClientDataset]) -> Result<Dataset> {
    let data = lookup(cohort, clients)?;
    Dataset::concat(cohort.members().iter().map(|k| &data[k].test))
}

fn score(spec: &ModelSpec, trained: Result<crate::nn::Trained>, test: &Dataset) -> Result<f64> {
    match trained {
        Ok(t) => accuracy(spec, &t.params, test),
        Err(Error::Diverged { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Per member: a model trained on its own data, one trained on the pooled
/// cohort data, and the FedAvg model, all scored on the pooled cohort test
/// set. Individual and central training run `E·R` epochs from the same `w0`.
/// The central model uses the first member's shuffle stream, so a
/// single-member cohort reproduces its individual model exactly.
pub fn run_baselines(
    cohort: &Cohort,
    cfg: &FederationConfig,
    spec: &ModelSpec,
    clients: &[ClientDataset],
    w0: &ParamVector,
) -> Result<BaselineReport> {
    cfg.validate_for(cohort)?;
    let data = lookup(cohort, clients)?;
    let test = pooled_test(cohort, clients)?;
    if test.is_empty() {
        return Err(Error::InvalidDataset(format!("cohort {} has no test data", cohort.id())));
    }
    let total_epochs = cfg.epochs * cfg.rounds;

    let lead = cohort.members()[0];
    let pooled_train = Dataset::concat(cohort.members().iter().map(|k| &data[k].train))?;
    let central = score(
        spec,
        client_update(spec, lead, w0, &cfg.train_config(lead, total_epochs, 0)?, &pooled_train),
        &test,
    )?;

    let fed = federated_averaging(cohort, cfg, spec, clients, w0)?;
    let federated = accuracy(spec, &fed.params, &test)?;

    let rows = cohort
        .members()
        .iter()
        .map(|&k| {
            let tc = cfg.train_config(k, total_epochs, 0)?;
            let individual = score(spec, client_update(spec, k, w0, &tc, &data[&k].train), &test)?;
            Ok(BaselineRow { client_id: k, individual, central, federated })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineReport { cohort_id: cohort.id(), rows, round_logs: fed.logs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn selection_sizes() {
        let c = Cohort::new(0, (0..10).collect()).unwrap();
        assert_eq!(select_clients(&c, 1.0, 3), (0..10).collect::<Vec<_>>());
        let picked = select_clients(&c, 0.3, 3);
        assert_eq!(picked.len(), 3);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_clients(&c, 0.3, 3), picked);
        let five = Cohort::new(1, vec![4, 8, 15, 16, 23]).unwrap();
        let one = select_clients(&five, 0.01, 9);
        assert_eq!(one.len(), 1);
        assert!(five.members().contains(&one[0]));
    }

    #[test]
    fn cohort_validation() {
        assert!(Cohort::new(0, vec![]).is_err());
        assert!(Cohort::new(0, vec![1, 1]).is_err());
        let map = BTreeMap::from([(0, 1), (1, 0), (2, 1)]);
        let cs = cohorts_from_map(&map).unwrap();
        assert_eq!(cs[0].members(), &[1]);
        assert_eq!(cs[1].members(), &[0, 2]);
    }

    #[test]
    fn weighted_mean_examples() {
        let eq = BTreeMap::from([(0, 5), (1, 5)]);
        assert_eq!(aggregate(&[(0, pv(&[0.0; 3])), (1, pv(&[2.0; 3]))], &eq).unwrap(), pv(&[1.0; 3]));
        let skewed = BTreeMap::from([(0, 1), (1, 3)]);
        assert_eq!(aggregate(&[(0, pv(&[0.0; 2])), (1, pv(&[4.0; 2]))], &skewed).unwrap(), pv(&[3.0; 2]));
        let three = BTreeMap::from([(0, 1), (1, 1), (2, 1)]);
        let same = pv(&[0.1, -0.7, 1e-3]);
        let ups: Vec<_> = (0..3).map(|k| (k, same.clone())).collect();
        assert_eq!(aggregate(&ups, &three).unwrap(), same);
    }

    #[test]
    fn aggregate_errors() {
        let sizes = BTreeMap::from([(0, 1), (1, 1)]);
        assert!(matches!(
            aggregate(&[(0, pv(&[0.0; 2])), (1, pv(&[0.0; 3]))], &sizes),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(aggregate(&[(0, pv(&[0.0])), (2, pv(&[0.0]))], &sizes).is_err());
        assert!(aggregate(&[], &sizes).is_err());
    }

    #[test]
    fn eta_source_lookup() {
        let per = EtaSource::PerClient(BTreeMap::from([(3, 0.01)]));
        assert_eq!(per.for_client(3).unwrap(), 0.01);
        assert!(per.for_client(4).is_err());
        let cfg = FederationConfig::new(1, 1.0, 1, 8, per, 0);
        assert!(cfg.validate_for(&Cohort::new(0, vec![3, 4]).unwrap()).is_err());
    }
}
