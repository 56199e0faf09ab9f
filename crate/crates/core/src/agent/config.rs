use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control_plane::TagSet;

pub const DEFAULT_POLL_INTERVAL: u64 = 30;
pub const DEFAULT_REPORT_INTERVAL: u64 = 60;
pub const DEFAULT_WATCH_DEBOUNCE: u64 = 5;
pub const DEFAULT_OUTBOX_LIMIT: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid agent config: {0}")]
    Invalid(String),
}

/// Intervals are logical seconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub cluster_id: String,
    #[serde(default)]
    pub org_key: String,
    #[serde(default)]
    pub control_plane_url: String,
    /// May be empty: the cluster then matches no subscription.
    #[serde(default)]
    pub tags: TagSet,
    #[serde(default = "default_poll")]
    pub poll_interval: u64,
    #[serde(default = "default_report")]
    pub report_interval: u64,
    #[serde(default = "default_debounce")]
    pub watch_debounce: u64,
    #[serde(default = "default_outbox")]
    pub outbox_limit: usize,
}

fn default_poll() -> u64 {
    DEFAULT_POLL_INTERVAL
}
fn default_report() -> u64 {
    DEFAULT_REPORT_INTERVAL
}
fn default_debounce() -> u64 {
    DEFAULT_WATCH_DEBOUNCE
}
fn default_outbox() -> usize {
    DEFAULT_OUTBOX_LIMIT
}

impl AgentConfig {
    pub fn new(cluster_id: impl Into<String>, org_key: impl Into<String>, tags: TagSet) -> Self {
        AgentConfig {
            cluster_id: cluster_id.into(),
            org_key: org_key.into(),
            control_plane_url: String::new(),
            tags,
            poll_interval: DEFAULT_POLL_INTERVAL,
            report_interval: DEFAULT_REPORT_INTERVAL,
            watch_debounce: DEFAULT_WATCH_DEBOUNCE,
            outbox_limit: DEFAULT_OUTBOX_LIMIT,
        }
    }

    /// JSON or YAML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        serde_yaml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: shown,
            message: e.to_string(),
        })
    }

    /// Override endpoint and key from `RAZORCD_URL` / `RAZORCD_ORG_KEY`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(url) = var("RAZORCD_URL").filter(|s| !s.is_empty()) {
            self.control_plane_url = url;
        }
        if let Some(key) = var("RAZORCD_ORG_KEY").filter(|s| !s.is_empty()) {
            self.org_key = key;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.cluster_id.trim().is_empty() {
            return bad("cluster_id must not be empty");
        }
        if self.poll_interval == 0 || self.report_interval == 0 || self.watch_debounce == 0 {
            return bad("intervals must be positive");
        }
        if self.outbox_limit == 0 {
            return bad("outbox_limit must be positive");
        }
        Ok(())
    }
}
