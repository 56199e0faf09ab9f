use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Timestamp;
use crate::cluster::ResourceKey;
use crate::hash::ContentHash;

pub type TagSet = BTreeSet<String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelVersion {
    pub uid: String,
    pub name: String,
    pub content_hash: ContentHash,
    pub location: String,
    pub payload_ref: String,
    pub created_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub created_at: Timestamp,
    /// In upload order.
    pub versions: Vec<ChannelVersion>,
}

impl Channel {
    pub fn version(&self, name: &str) -> Option<&ChannelVersion> {
        self.versions.iter().find(|v| v.name == name)
    }

    pub fn summary(&self) -> ChannelSummary {
        ChannelSummary {
            name: self.name.clone(),
            created_at: self.created_at,
            version_count: self.versions.len(),
            latest: self.versions.last().map(|v| v.name.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub name: String,
    pub created_at: Timestamp,
    pub version_count: usize,
    pub latest: Option<String>,
}

/// The `version` object of an upload receipt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionRef {
    pub uid: String,
    pub name: String,
    pub location: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadReceipt {
    pub status: String,
    pub version: VersionRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub id: String,
    pub name: String,
    pub channel_name: String,
    pub version_name: String,
    pub version_uid: String,
    pub tags: TagSet,
    /// Bumped on every effective version change.
    pub revision: u64,
    pub created_at: Timestamp,
}

impl Subscription {
    /// A subscription targets a cluster iff its tags are a subset of the
    /// cluster's tags.
    pub fn matches(&self, cluster_tags: &TagSet) -> bool {
        self.tags.is_subset(cluster_tags)
    }
}

/// What a polling agent receives for each matching subscription.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriptionHandout {
    pub sub_id: String,
    pub sub_name: String,
    pub sub_revision: u64,
    pub channel: String,
    pub version_name: String,
    pub version_uid: String,
    pub artifact_url: String,
    pub content_hash: ContentHash,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: String,
    /// Credential the cluster registered with; never serialized.
    #[serde(skip)]
    pub org_key: String,
    pub tags: TagSet,
    pub registered_at: Timestamp,
    pub last_seen: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub tags: TagSet,
    pub last_seen: Timestamp,
    pub resource_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportLevel {
    Lite,
    Detail,
    Debug,
}

impl ReportLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportLevel::Lite => "lite",
            ReportLevel::Detail => "detail",
            ReportLevel::Debug => "debug",
        }
    }
}

impl fmt::Display for ReportLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lite" => Ok(ReportLevel::Lite),
            "detail" => Ok(ReportLevel::Detail),
            "debug" => Ok(ReportLevel::Debug),
            other => Err(format!("unknown report level {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportTrigger {
    Interval,
    Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub cluster_id: String,
    pub resource_key: ResourceKey,
    pub level: ReportLevel,
    pub payload: Value,
    pub observed_at: Timestamp,
    pub trigger: ReportTrigger,
}

impl ResourceReport {
    /// `status.phase` of the reported object, if any.
    pub fn phase(&self) -> Option<&str> {
        self.payload.get("status")?.get("phase")?.as_str()
    }

    pub fn labels(&self) -> Option<&serde_json::Map<String, Value>> {
        self.payload.get("metadata")?.get("labels")?.as_object()
    }
}

/// One agent upload of watch-keeper observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBatch {
    pub cluster_id: String,
    pub reports: Vec<ResourceReport>,
    pub sent_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlertCondition {
    ClusterStale { max_silence: u64 },
    ResourceStatusNot { expected: String, grace: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertScope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: TagSet,
}

impl AlertScope {
    pub fn covers(&self, cluster: &ClusterRecord) -> bool {
        self.cluster_id
            .as_deref()
            .is_none_or(|id| id == cluster.cluster_id)
            && self.tags.is_subset(&cluster.tags)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertRule {
    pub id: String,
    pub name: String,
    pub condition: AlertCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<AlertScope>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlertFiring {
    pub rule_id: String,
    pub rule_name: String,
    pub subject: String,
    pub since: Timestamp,
}

/// Filter for resource queries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResourceQuery {
    pub kind: Option<String>,
    pub namespace: Option<String>,
    pub labels: Vec<(String, String)>,
}
