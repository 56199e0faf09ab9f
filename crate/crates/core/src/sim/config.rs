use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExecMode, SimError};
use crate::clock::Timestamp;
use crate::control_plane::TagSet;

/// Injected failure. Cluster indices are zero-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    KillPod {
        cluster: usize,
        namespace: String,
        name: String,
    },
    AgentOffline {
        cluster: usize,
        until: Timestamp,
    },
    ArtifactUnreachable {
        until: Timestamp,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: FaultKind,
}

/// All times are logical seconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_clusters: usize,
    /// Cluster `i` gets `cluster_tags[i % len]`.
    pub cluster_tags: Vec<TagSet>,
    pub subscription_tags: TagSet,
    pub poll_interval: u64,
    pub report_interval: u64,
    pub watch_debounce: u64,
    /// Agents start at a seeded offset in `[0, start_jitter)`; defaults to
    /// the poll interval.
    pub start_jitter: Option<u64>,
    pub seed: u64,
    pub faults: Vec<FaultSpec>,
    pub push_parallelism: usize,
    pub per_cluster_push_cost: u64,
    /// When the subscription flips from 1.0 to 2.0; `None` never flips.
    pub flip_at: Option<Timestamp>,
    pub horizon: Timestamp,
    /// Nginx resources the administrator creates on each matching cluster.
    pub instances_per_cluster: usize,
    pub instance_replicas: u64,
    pub instance_ingress: bool,
    /// When those are created; defaults to two poll intervals.
    pub instances_at: Option<Timestamp>,
    pub exec: ExecMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_clusters: 10,
            cluster_tags: vec![TagSet::from(["demo".to_string()])],
            subscription_tags: TagSet::from(["demo".to_string()]),
            poll_interval: 30,
            report_interval: 60,
            watch_debounce: 5,
            start_jitter: None,
            seed: 42,
            faults: Vec::new(),
            push_parallelism: 10,
            per_cluster_push_cost: 60,
            flip_at: Some(300),
            horizon: 86_400,
            instances_per_cluster: 1,
            instance_replicas: 1,
            instance_ingress: true,
            instances_at: None,
            exec: ExecMode::default(),
        }
    }
}

impl SimConfig {
    /// JSON or YAML; absent fields take defaults.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let cfg: SimConfig = serde_yaml::from_str(&raw).map_err(|e| {
            SimError::InvalidConfig(format!("cannot parse {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn start_jitter(&self) -> u64 {
        self.start_jitter.unwrap_or(self.poll_interval)
    }

    pub fn instances_at(&self) -> Timestamp {
        self.instances_at.unwrap_or(2 * self.poll_interval)
    }

    pub fn tags_for(&self, cluster: usize) -> TagSet {
        if self.cluster_tags.is_empty() {
            TagSet::new()
        } else {
            self.cluster_tags[cluster % self.cluster_tags.len()].clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.poll_interval == 0 || self.report_interval == 0 || self.watch_debounce == 0 {
            return bad("intervals must be positive".into());
        }
        if self.push_parallelism == 0 || self.per_cluster_push_cost == 0 {
            return bad("push_parallelism and per_cluster_push_cost must be positive".into());
        }
        if self.subscription_tags.is_empty() {
            return bad("subscription_tags must not be empty".into());
        }
        if let Some(f) = self.flip_at {
            if f > self.horizon {
                return bad(format!(
                    "flip_at {f} is beyond the horizon {}",
                    self.horizon
                ));
            }
            if self.instances_per_cluster > 0 && self.instances_at() >= f {
                return bad(format!(
                    "instances_at {} must precede flip_at {f}",
                    self.instances_at()
                ));
            }
        }
        for fault in &self.faults {
            if fault.at > self.horizon {
                return bad(format!("fault at {} is beyond the horizon", fault.at));
            }
            let cluster = match &fault.kind {
                FaultKind::KillPod { cluster, .. } | FaultKind::AgentOffline { cluster, .. } => {
                    Some(*cluster)
                }
                FaultKind::ArtifactUnreachable { .. } => None,
            };
            if let Some(c) = cluster.filter(|c| *c >= self.num_clusters) {
                return bad(format!(
                    "fault names cluster {c} but only {} exist",
                    self.num_clusters
                ));
            }
            match &fault.kind {
                FaultKind::AgentOffline { until, .. }
                | FaultKind::ArtifactUnreachable { until }
                    if *until < fault.at =>
                {
                    return bad(format!(
                        "fault until {until} precedes its start {}",
                        fault.at
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
