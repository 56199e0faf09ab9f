//! Deterministic discrete-event simulation of many clusters under one
//! control plane, with a central-push baseline for comparison.

mod compare;
mod config;
mod exec;
mod pull;
mod push;
mod scenario;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::control_plane::ApiError;

pub use compare::{compare_models, ComparisonRow, ComparisonTable, DEFAULT_SWEEP};
pub use config::{FaultKind, FaultSpec, SimConfig};
pub use exec::{map, map_mut, ExecMode};
pub use pull::{
    cluster_name, run_pull_rollout, sim_credentials, PullSim, SimCluster, CHANNEL, INITIAL_VERSION,
    INSTANCE_NAMESPACE, SIM_ORG_KEY, SUBSCRIPTION, UPGRADE_VERSION,
};
pub use push::run_push_rollout;
pub use scenario::{run_e2e_scenario, Scenario, ScenarioCheck, ScenarioResult};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("horizon exceeded at t={}", .0.end_time)]
    HorizonExceeded(Box<SimReport>),
    #[error("scenario {scenario} failed: {check}")]
    ScenarioFailed { scenario: String, check: String },
    #[error("control plane: {0}")]
    ControlPlane(#[from] ApiError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutModel {
    Pull,
    Push,
}

/// Times are measured from the flip, or from t=0 when there is none.
/// `None` means the cluster had not converged when the run ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTime {
    pub cluster_id: String,
    pub applied: Option<u64>,
    pub workload: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub model: RolloutModel,
    pub num_clusters: usize,
    pub matching_clusters: usize,
    /// Until every matching cluster applied the target bundle.
    pub convergence_time: Option<u64>,
    /// Until every matching cluster's operator and instances serve the target.
    pub workload_convergence_time: Option<u64>,
    pub per_cluster_times: Vec<ClusterTime>,
    pub events_processed: u64,
    pub alerts_fired: usize,
    pub admin_cluster_actions_after_flip: usize,
    pub end_time: Timestamp,
    pub trace_len: usize,
    pub trace_digest: String,
}

impl SimReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        let rows = [
            ("model", format!("{:?}", self.model).to_lowercase()),
            ("clusters", self.num_clusters.to_string()),
            ("matching", self.matching_clusters.to_string()),
            ("convergence_time", opt(self.convergence_time)),
            (
                "workload_convergence_time",
                opt(self.workload_convergence_time),
            ),
            ("events_processed", self.events_processed.to_string()),
            ("alerts_fired", self.alerts_fired.to_string()),
            (
                "admin_cluster_actions_after_flip",
                self.admin_cluster_actions_after_flip.to_string(),
            ),
            ("end_time", self.end_time.to_string()),
            ("trace_len", self.trace_len.to_string()),
            ("trace_digest", self.trace_digest.clone()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

pub(crate) fn digest_lines<'a>(lines: impl IntoIterator<Item = &'a String>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}
