use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fedhpo_core::analysis::{Approach, ResultTable};
use fedhpo_core::federation::{BaselineReport, RoundLog};
use fedhpo_core::hpo::HpoOutcome;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ArtifactKind {
    Hpo,
    Baselines,
}

impl ArtifactKind {
    pub fn stem(self) -> &'static str {
        match self {
            ArtifactKind::Hpo => "hpo",
            ArtifactKind::Baselines => "baselines",
        }
    }
}

/// One optimization regime/strategy on one cohort, followed by training the
/// final federated model with the selected learning rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CohortOutcome {
    pub cohort_id: usize,
    pub approach: Approach,
    pub outcome: HpoOutcome,
    /// Learning rate each member trained with in the final federation.
    pub learning_rates: BTreeMap<usize, f64>,
    pub round_logs: Vec<RoundLog>,
    /// Final model on the pooled cohort test split.
    pub test_accuracy: f64,
}

/// Wall-clock milliseconds; the only non-deterministic part of an artifact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Timing {
    pub total_ms: u64,
    pub stages: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunArtifact {
    pub kind: ArtifactKind,
    /// The config file byte for byte, before overrides.
    pub config_snapshot: String,
    pub overrides: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub outcomes: Vec<CohortOutcome>,
    #[serde(default)]
    pub baselines: Vec<BaselineReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_learning_rate: Option<f64>,
    pub results: ResultTable,
    pub timing: Timing,
}

impl RunArtifact {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::runtime("io", format!("cannot read artifact {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::runtime("artifact.parse", format!("{} is not a run artifact: {e}", path.display())))
    }

    /// Learning rate behind a result row, if the artifact records one.
    pub fn learning_rate(&self, client: usize, approach: Approach) -> Option<f64> {
        match self.kind {
            ArtifactKind::Baselines => self.baseline_learning_rate,
            ArtifactKind::Hpo => self
                .outcomes
                .iter()
                .find(|o| o.approach == approach && o.learning_rates.contains_key(&client))
                .map(|o| o.learning_rates[&client]),
        }
    }

    pub fn without_timing(&self) -> RunArtifact {
        RunArtifact { timing: Timing::default(), ..self.clone() }
    }
}
