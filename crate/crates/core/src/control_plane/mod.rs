//! The control plane: channels of immutable bundle versions, tag-targeted
//! subscriptions, the cluster inventory, watch-keeper report ingestion and
//! alert rules.
//!
//! Catalog writes (channels, versions, subscriptions, rules) are serialized
//! behind one lock; polls and artifact fetches only read it. Inventory and
//! report state live behind their own locks so agent traffic does not contend
//! with admin writes.

mod alerts;
mod api;
mod artifacts;
mod error;
mod types;

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

pub use api::{
    handle, ADMIN_API_KEY_HEADER, ADMIN_USER_HEADER, ORG_KEY_HEADER, RESOURCE_NAME_HEADER,
};
pub use artifacts::{ArtifactStore, FileArtifactStore, MemoryArtifactStore};
pub use error::ApiError;
pub use types::*;

use crate::auth::Credentials;
use crate::bundle::Bundle;
use crate::clock::{Clock, Timestamp};
use crate::cluster::{ResourceKey, ResourceObject};
use crate::hash::{sha256_hex, ContentHash};

/// Reports kept per (cluster, resource).
pub const REPORT_HISTORY_LIMIT: usize = 50;

pub fn artifact_url(uid: &str) -> String {
    format!("/api/v1/artifacts/{uid}")
}

/// Names used in URL paths: non-empty, at most 253 bytes of `[A-Za-z0-9._-]`.
pub fn is_path_safe(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 253
        && name != "."
        && name != ".."
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct Catalog {
    channels: BTreeMap<String, Channel>,
    /// version uid → channel name
    version_index: BTreeMap<String, String>,
    subscriptions: BTreeMap<String, Subscription>,
    alert_rules: BTreeMap<String, AlertRule>,
    next_id: u64,
}

impl Catalog {
    fn mint_id(&mut self, prefix: &str, name: &str) -> String {
        self.next_id += 1;
        let digest = sha256_hex(format!("{prefix}\0{}\0{name}", self.next_id).as_bytes());
        format!("{prefix}-{}", &digest[..12])
    }

    fn version(&self, channel: &str, version: &str) -> Result<&ChannelVersion, ApiError> {
        let ch = self
            .channels
            .get(channel)
            .ok_or_else(|| ApiError::ChannelNotFound(channel.to_string()))?;
        ch.version(version)
            .ok_or_else(|| ApiError::VersionNotFound {
                channel: channel.to_string(),
                version: version.to_string(),
            })
    }

    /// Look a subscription up by id, falling back to name.
    fn subscription_id(&self, id_or_name: &str) -> Result<String, ApiError> {
        if self.subscriptions.contains_key(id_or_name) {
            return Ok(id_or_name.to_string());
        }
        self.subscriptions
            .values()
            .find(|s| s.name == id_or_name)
            .map(|s| s.id.clone())
            .ok_or_else(|| ApiError::SubscriptionNotFound(id_or_name.to_string()))
    }
}

#[derive(Debug, Clone)]
struct ResourceHistory {
    reports: VecDeque<ResourceReport>,
    latest: ResourceReport,
}

type ReportIndex = BTreeMap<(String, ResourceKey), ResourceHistory>;

pub struct ControlPlane {
    credentials: Credentials,
    artifacts: Arc<dyn ArtifactStore>,
    clock: Arc<dyn Clock>,
    catalog_path: Option<PathBuf>,
    catalog: RwLock<Catalog>,
    inventory: RwLock<BTreeMap<String, ClusterRecord>>,
    reports: RwLock<ReportIndex>,
}

fn read<T>(l: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(l: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|e| e.into_inner())
}

impl ControlPlane {
    pub fn new(
        credentials: Credentials,
        artifacts: Arc<dyn ArtifactStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        ControlPlane {
            credentials,
            artifacts,
            clock,
            catalog_path: None,
            catalog: RwLock::new(Catalog::default()),
            inventory: RwLock::new(BTreeMap::new()),
            reports: RwLock::new(BTreeMap::new()),
        }
    }

    /// Persist the catalog to `path` after every catalog write, loading it
    /// first if it exists.
    pub fn with_catalog_file(mut self, path: impl AsRef<Path>) -> Result<Self, ApiError> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            let raw = fs::read(&path).map_err(|e| ApiError::Storage(e.to_string()))?;
            let catalog: Catalog =
                serde_json::from_slice(&raw).map_err(|e| ApiError::Storage(e.to_string()))?;
            *write(&self.catalog) = catalog;
        }
        self.catalog_path = Some(path);
        Ok(self)
    }

    pub fn credentials(&self) -> &Credentials {
        &self.credentials
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn artifact_location(&self) -> &str {
        self.artifacts.label()
    }

    fn persist(&self, catalog: &Catalog) -> Result<(), ApiError> {
        let Some(path) = &self.catalog_path else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        let bytes =
            serde_json::to_vec_pretty(catalog).map_err(|e| ApiError::Storage(e.to_string()))?;
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| ApiError::Storage(e.to_string()))
    }

    fn check_org_key(&self, org_key: &str) -> Result<(), ApiError> {
        if self.credentials.org_key_matches(org_key) {
            Ok(())
        } else {
            Err(ApiError::Unauthorized)
        }
    }

    // ---- channels -------------------------------------------------------

    pub fn create_channel(&self, name: &str) -> Result<Channel, ApiError> {
        if !is_path_safe(name) {
            return Err(ApiError::InvalidName(name.to_string()));
        }
        let mut cat = write(&self.catalog);
        if cat.channels.contains_key(name) {
            return Err(ApiError::DuplicateChannel(name.to_string()));
        }
        let channel = Channel {
            name: name.to_string(),
            created_at: self.clock.now(),
            versions: Vec::new(),
        };
        cat.channels.insert(name.to_string(), channel.clone());
        self.persist(&cat)?;
        Ok(channel)
    }

    pub fn list_channels(&self) -> Vec<ChannelSummary> {
        read(&self.catalog)
            .channels
            .values()
            .map(Channel::summary)
            .collect()
    }

    pub fn get_channel(&self, name: &str) -> Result<Channel, ApiError> {
        read(&self.catalog)
            .channels
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::ChannelNotFound(name.to_string()))
    }

    /// Rejected while any subscription references the channel.
    pub fn delete_channel(&self, name: &str) -> Result<(), ApiError> {
        let mut cat = write(&self.catalog);
        let channel = cat
            .channels
            .get(name)
            .ok_or_else(|| ApiError::ChannelNotFound(name.to_string()))?;
        if cat.subscriptions.values().any(|s| s.channel_name == name) {
            return Err(ApiError::ChannelInUse(name.to_string()));
        }
        let uids: Vec<String> = channel.versions.iter().map(|v| v.uid.clone()).collect();
        for uid in uids {
            cat.version_index.remove(&uid);
        }
        cat.channels.remove(name);
        self.persist(&cat)
    }

    /// Store a new immutable version. Requires the org key and admin
    /// credentials.
    pub fn upload_version(
        &self,
        channel: &str,
        version_name: &str,
        payload: &[u8],
        creds: &Credentials,
    ) -> Result<UploadReceipt, ApiError> {
        if !self.credentials.all_match(creds) {
            return Err(ApiError::Unauthorized);
        }
        let mut cat = write(&self.catalog);
        let ch = cat
            .channels
            .get(channel)
            .ok_or_else(|| ApiError::ChannelNotFound(channel.to_string()))?;
        if !is_path_safe(version_name) {
            return Err(ApiError::InvalidName(version_name.to_string()));
        }
        if ch.version(version_name).is_some() {
            return Err(ApiError::VersionExists {
                channel: channel.to_string(),
                version: version_name.to_string(),
            });
        }
        let bundle =
            Bundle::parse(payload).map_err(|e| ApiError::MalformedBundle(e.to_string()))?;
        let content_hash = bundle.content_hash();

        cat.next_id += 1;
        let seed = format!(
            "version\0{channel}\0{version_name}\0{content_hash}\0{}",
            cat.next_id
        );
        let uid = sha256_hex(seed.as_bytes())[..32].to_string();
        self.artifacts
            .put(&uid, payload)
            .map_err(|e| ApiError::Storage(e.to_string()))?;

        let version = ChannelVersion {
            uid: uid.clone(),
            name: version_name.to_string(),
            content_hash,
            location: self.artifacts.label().to_string(),
            payload_ref: uid.clone(),
            created_at: self.clock.now(),
        };
        let receipt = UploadReceipt {
            status: "success".into(),
            version: VersionRef {
                uid: uid.clone(),
                name: version.name.clone(),
                location: version.location.clone(),
            },
        };
        cat.channels
            .get_mut(channel)
            .expect("checked above")
            .versions
            .push(version);
        cat.version_index.insert(uid, channel.to_string());
        self.persist(&cat)?;
        Ok(receipt)
    }

    /// Version metadata by uid.
    pub fn version_by_uid(&self, uid: &str) -> Option<(String, ChannelVersion)> {
        let cat = read(&self.catalog);
        let channel = cat.version_index.get(uid)?;
        let v = cat
            .channels
            .get(channel)?
            .versions
            .iter()
            .find(|v| v.uid == uid)?;
        Some((channel.clone(), v.clone()))
    }

    /// Stored bytes for a version, verified against its content hash.
    pub fn fetch_artifact(&self, version_uid: &str, org_key: &str) -> Result<Vec<u8>, ApiError> {
        self.check_org_key(org_key)?;
        let (_, version) = self
            .version_by_uid(version_uid)
            .ok_or_else(|| ApiError::NotFound(format!("artifact {version_uid}")))?;
        let bytes = self
            .artifacts
            .get(&version.payload_ref)
            .map_err(|e| ApiError::Storage(e.to_string()))?
            .ok_or_else(|| ApiError::NotFound(format!("artifact {version_uid}")))?;
        let actual = Bundle::parse(&bytes)
            .map(|b| b.content_hash())
            .map_err(|e| ApiError::Storage(format!("stored artifact unreadable: {e}")))?;
        if actual != version.content_hash {
            return Err(ApiError::Storage(format!(
                "artifact {version_uid} does not match its content hash"
            )));
        }
        Ok(bytes)
    }

    // ---- subscriptions ----------------------------------------------------

    pub fn create_subscription(
        &self,
        name: &str,
        channel: &str,
        version_name: &str,
        tags: TagSet,
    ) -> Result<Subscription, ApiError> {
        if name.trim().is_empty() {
            return Err(ApiError::InvalidName(name.to_string()));
        }
        if tags.is_empty() || tags.iter().any(|t| t.trim().is_empty()) {
            return Err(ApiError::EmptyTags);
        }
        let mut cat = write(&self.catalog);
        let version_uid = cat.version(channel, version_name)?.uid.clone();
        if cat.subscriptions.values().any(|s| s.name == name) {
            return Err(ApiError::DuplicateSubscription(name.to_string()));
        }
        let id = cat.mint_id("sub", name);
        let sub = Subscription {
            id: id.clone(),
            name: name.to_string(),
            channel_name: channel.to_string(),
            version_name: version_name.to_string(),
            version_uid,
            tags,
            revision: 1,
            created_at: self.clock.now(),
        };
        cat.subscriptions.insert(id, sub.clone());
        self.persist(&cat)?;
        Ok(sub)
    }

    /// Point a subscription at another version of its channel. Setting the
    /// current version is a no-op and leaves the revision alone.
    pub fn set_subscription_version(
        &self,
        sub_id_or_name: &str,
        version_name: &str,
    ) -> Result<Subscription, ApiError> {
        let mut cat = write(&self.catalog);
        let id = cat.subscription_id(sub_id_or_name)?;
        let channel = cat.subscriptions[&id].channel_name.clone();
        let uid = cat.version(&channel, version_name)?.uid.clone();
        let sub = cat.subscriptions.get_mut(&id).expect("resolved above");
        if sub.version_uid == uid {
            return Ok(sub.clone());
        }
        sub.version_name = version_name.to_string();
        sub.version_uid = uid;
        sub.revision += 1;
        let out = sub.clone();
        self.persist(&cat)?;
        Ok(out)
    }

    pub fn delete_subscription(&self, sub_id_or_name: &str) -> Result<Subscription, ApiError> {
        let mut cat = write(&self.catalog);
        let id = cat.subscription_id(sub_id_or_name)?;
        let sub = cat.subscriptions.remove(&id).expect("resolved above");
        self.persist(&cat)?;
        Ok(sub)
    }

    pub fn get_subscription(&self, sub_id_or_name: &str) -> Result<Subscription, ApiError> {
        let cat = read(&self.catalog);
        let id = cat.subscription_id(sub_id_or_name)?;
        Ok(cat.subscriptions[&id].clone())
    }

    /// All subscriptions ordered by name.
    pub fn list_subscriptions(&self) -> Vec<Subscription> {
        let mut subs: Vec<Subscription> = read(&self.catalog)
            .subscriptions
            .values()
            .cloned()
            .collect();
        subs.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
        subs
    }

    // ---- clusters ---------------------------------------------------------

    /// Add a cluster to the inventory, or refresh its tags if present.
    pub fn register_cluster(
        &self,
        org_key: &str,
        cluster_id: &str,
        tags: TagSet,
    ) -> Result<ClusterRecord, ApiError> {
        self.check_org_key(org_key)?;
        if !is_path_safe(cluster_id) {
            return Err(ApiError::InvalidName(cluster_id.to_string()));
        }
        let now = self.clock.now();
        let mut inv = write(&self.inventory);
        let record = inv
            .entry(cluster_id.to_string())
            .and_modify(|r| {
                r.tags = tags.clone();
                r.last_seen = now;
            })
            .or_insert_with(|| ClusterRecord {
                cluster_id: cluster_id.to_string(),
                org_key: org_key.to_string(),
                tags: tags.clone(),
                registered_at: now,
                last_seen: now,
            });
        Ok(record.clone())
    }

    pub fn cluster(&self, cluster_id: &str) -> Result<ClusterRecord, ApiError> {
        read(&self.inventory)
            .get(cluster_id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownCluster(cluster_id.to_string()))
    }

    fn touch(&self, cluster_id: &str, tags: Option<&TagSet>) -> Result<(), ApiError> {
        let now = self.clock.now();
        let mut inv = write(&self.inventory);
        let r = inv
            .get_mut(cluster_id)
            .ok_or_else(|| ApiError::UnknownCluster(cluster_id.to_string()))?;
        r.last_seen = r.last_seen.max(now);
        if let Some(t) = tags {
            r.tags = t.clone();
        }
        Ok(())
    }

    /// Subscriptions whose tags are a subset of `cluster_tags`, ordered by
    /// subscription name.
    pub fn poll_subscriptions(
        &self,
        cluster_id: &str,
        cluster_tags: &TagSet,
    ) -> Result<Vec<SubscriptionHandout>, ApiError> {
        self.touch(cluster_id, Some(cluster_tags))?;
        let cat = read(&self.catalog);
        let mut handouts: Vec<SubscriptionHandout> = cat
            .subscriptions
            .values()
            .filter(|s| s.matches(cluster_tags))
            .filter_map(|s| {
                let v = cat
                    .channels
                    .get(&s.channel_name)?
                    .version(&s.version_name)?;
                Some(SubscriptionHandout {
                    sub_id: s.id.clone(),
                    sub_name: s.name.clone(),
                    sub_revision: s.revision,
                    channel: s.channel_name.clone(),
                    version_name: s.version_name.clone(),
                    version_uid: v.uid.clone(),
                    artifact_url: artifact_url(&v.uid),
                    content_hash: v.content_hash.clone(),
                })
            })
            .collect();
        handouts.sort_by(|a, b| {
            a.sub_name
                .cmp(&b.sub_name)
                .then_with(|| a.sub_id.cmp(&b.sub_id))
        });
        Ok(handouts)
    }

    // ---- reports ----------------------------------------------------------

    pub fn ingest_report(&self, report: ResourceReport, org_key: &str) -> Result<(), ApiError> {
        self.check_org_key(org_key)?;
        self.cluster(&report.cluster_id)?;
        validate_report(&report)?;
        self.touch(&report.cluster_id, None)?;
        self.append_reports(vec![report]);
        Ok(())
    }

    /// All-or-nothing ingestion of a batch. Returns the number stored.
    pub fn ingest_batch(&self, batch: ReportBatch, org_key: &str) -> Result<usize, ApiError> {
        self.check_org_key(org_key)?;
        self.cluster(&batch.cluster_id)?;
        for r in &batch.reports {
            if r.cluster_id != batch.cluster_id {
                return Err(ApiError::MalformedReport(format!(
                    "report for {} inside batch for {}",
                    r.cluster_id, batch.cluster_id
                )));
            }
            validate_report(r)?;
        }
        self.touch(&batch.cluster_id, None)?;
        let n = batch.reports.len();
        self.append_reports(batch.reports);
        Ok(n)
    }

    fn append_reports(&self, reports: Vec<ResourceReport>) {
        let mut idx = write(&self.reports);
        for report in reports {
            let k = (report.cluster_id.clone(), report.resource_key.clone());
            match idx.get_mut(&k) {
                Some(h) => {
                    if report.observed_at >= h.latest.observed_at {
                        h.latest = report.clone();
                    }
                    if h.reports.len() == REPORT_HISTORY_LIMIT {
                        h.reports.pop_front();
                    }
                    h.reports.push_back(report);
                }
                None => {
                    idx.insert(
                        k,
                        ResourceHistory {
                            reports: VecDeque::from([report.clone()]),
                            latest: report,
                        },
                    );
                }
            }
        }
    }

    pub fn query_inventory(&self) -> Vec<ClusterSummary> {
        let inv = read(&self.inventory);
        let idx = read(&self.reports);
        inv.values()
            .map(|r| ClusterSummary {
                cluster_id: r.cluster_id.clone(),
                tags: r.tags.clone(),
                last_seen: r.last_seen,
                resource_count: idx.keys().filter(|(c, _)| *c == r.cluster_id).count(),
            })
            .collect()
    }

    /// Latest report per matching resource of a cluster.
    pub fn query_resources(
        &self,
        cluster_id: &str,
        query: &ResourceQuery,
    ) -> Result<Vec<ResourceReport>, ApiError> {
        self.cluster(cluster_id)?;
        let idx = read(&self.reports);
        Ok(idx
            .iter()
            .filter(|((c, key), _)| {
                c == cluster_id
                    && query.kind.as_deref().is_none_or(|k| k == key.kind)
                    && query
                        .namespace
                        .as_deref()
                        .is_none_or(|n| n == key.namespace)
            })
            .map(|(_, h)| &h.latest)
            .filter(|r| {
                query.labels.iter().all(|(k, v)| {
                    r.labels().and_then(|l| l.get(k)).and_then(|x| x.as_str()) == Some(v.as_str())
                })
            })
            .cloned()
            .collect())
    }

    /// Stored history for one resource, oldest first.
    pub fn resource_history(
        &self,
        cluster_id: &str,
        key: &ResourceKey,
    ) -> Result<Vec<ResourceReport>, ApiError> {
        self.cluster(cluster_id)?;
        Ok(read(&self.reports)
            .get(&(cluster_id.to_string(), key.clone()))
            .map(|h| h.reports.iter().cloned().collect())
            .unwrap_or_default())
    }

    // ---- alerts -----------------------------------------------------------

    pub fn create_alert_rule(
        &self,
        name: &str,
        condition: AlertCondition,
        scope: Option<AlertScope>,
    ) -> Result<AlertRule, ApiError> {
        alerts::validate(name, &condition)?;
        let mut cat = write(&self.catalog);
        let id = cat.mint_id("rule", name);
        let rule = AlertRule {
            id: id.clone(),
            name: name.to_string(),
            condition,
            scope,
        };
        cat.alert_rules.insert(id, rule.clone());
        self.persist(&cat)?;
        Ok(rule)
    }

    pub fn delete_alert_rule(&self, id: &str) -> Result<(), ApiError> {
        let mut cat = write(&self.catalog);
        cat.alert_rules
            .remove(id)
            .ok_or_else(|| ApiError::NotFound(format!("alert rule {id}")))?;
        self.persist(&cat)
    }

    pub fn list_alert_rules(&self) -> Vec<AlertRule> {
        read(&self.catalog).alert_rules.values().cloned().collect()
    }

    /// Pure function of stored state and `now`.
    pub fn evaluate_alerts(&self, now: Timestamp) -> Vec<AlertFiring> {
        let cat = read(&self.catalog);
        let inv = read(&self.inventory);
        let idx = read(&self.reports);
        alerts::evaluate(cat.alert_rules.values(), &inv, &idx, now)
    }
}

/// Level/payload consistency: every payload carries `metadata` and `status`;
/// lite payloads never carry `spec`; detail and debug payloads do; debug
/// payloads are full object documents.
pub fn validate_report(report: &ResourceReport) -> Result<(), ApiError> {
    let bad = |m: &str| {
        Err(ApiError::MalformedReport(format!(
            "{}: {m}",
            report.resource_key
        )))
    };
    let Some(obj) = report.payload.as_object() else {
        return bad("payload is not an object");
    };
    if !obj.contains_key("metadata") || !obj.contains_key("status") {
        return bad("payload needs metadata and status sections");
    }
    match report.level {
        ReportLevel::Lite if obj.contains_key("spec") => bad("lite report contains spec"),
        ReportLevel::Detail | ReportLevel::Debug if !obj.contains_key("spec") => {
            bad("report lacks spec")
        }
        ReportLevel::Debug => {
            match ResourceObject::from_document(&report.payload, &report.resource_key.namespace) {
                Ok(o) if o.key == report.resource_key => Ok(()),
                Ok(_) => bad("debug snapshot key does not match resource_key"),
                Err(e) => bad(&e.to_string()),
            }
        }
        _ => Ok(()),
    }
}

/// Content hash of a stored version, when known.
pub fn expected_hash(cp: &ControlPlane, uid: &str) -> Option<ContentHash> {
    cp.version_by_uid(uid).map(|(_, v)| v.content_hash)
}
