//! RemoteResource objects and their reconciliation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentError, ControlPlaneClient};
use crate::bundle::Bundle;
use crate::cluster::{
    ClusterStore, CrdDefinition, ListParams, ResourceKey, ResourceObject, CRD_KIND,
};
use crate::control_plane::SubscriptionHandout;
use crate::hash::ContentHash;

pub const RR_GROUP: &str = "deploy.razee.io";
pub const RR_VERSION: &str = "v1alpha2";
pub const RR_API: &str = "deploy.razee.io/v1alpha2";
pub const RR_KIND: &str = "RemoteResource";
pub const RR_PLURAL: &str = "remoteresources";
pub const RR_NAMESPACE: &str = "razeedeploy";
pub const MANAGED_BY_LABEL: (&str, &str) = ("razee/managed-by", "clustersubscription");
pub const SUB_ID_ANNOTATION: &str = "razeedash.io/sub-id";
pub const VERSION_UID_ANNOTATION: &str = "razeedash.io/version-uid";
/// Namespace for bundle documents that do not name one.
pub const DEFAULT_NAMESPACE: &str = "default";

pub fn remote_resource_crd() -> CrdDefinition {
    CrdDefinition::new(RR_GROUP, RR_VERSION, RR_KIND, RR_PLURAL)
}

pub fn rr_key(sub_id: &str) -> ResourceKey {
    ResourceKey::new(RR_API, RR_KIND, RR_NAMESPACE, format!("sub-{sub_id}"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RemoteResourceSpec {
    pub artifact_url: String,
    pub version_uid: String,
    pub sub_id: String,
    pub sub_revision: u64,
    pub content_hash: ContentHash,
}

impl From<&SubscriptionHandout> for RemoteResourceSpec {
    fn from(h: &SubscriptionHandout) -> Self {
        RemoteResourceSpec {
            artifact_url: h.artifact_url.clone(),
            version_uid: h.version_uid.clone(),
            sub_id: h.sub_id.clone(),
            sub_revision: h.sub_revision,
            content_hash: h.content_hash.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemotePhase {
    #[default]
    Pending,
    Applied,
    Failed,
}

/// `phase == Applied` implies `applied_hash` is the bundle's content hash.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RemoteResourceStatus {
    #[serde(default)]
    pub applied_hash: Option<ContentHash>,
    #[serde(default)]
    pub applied_version_uid: Option<String>,
    /// Exactly the objects last applied from this resource's bundle.
    #[serde(default)]
    pub applied_keys: Vec<ResourceKey>,
    #[serde(default)]
    pub phase: RemotePhase,
    #[serde(default)]
    pub last_error: Option<String>,
}

impl RemoteResourceStatus {
    pub fn of(obj: &ResourceObject) -> Self {
        serde_json::from_value(obj.status.clone()).unwrap_or_default()
    }
}

pub fn remote_resource(h: &SubscriptionHandout) -> ResourceObject {
    let spec = serde_json::to_value(RemoteResourceSpec::from(h)).expect("spec serializes");
    ResourceObject::new(rr_key(&h.sub_id), spec).with_label(MANAGED_BY_LABEL.0, MANAGED_BY_LABEL.1)
}

/// RemoteResources created by the subscription poller, by name.
pub fn managed_remote_resources(store: &ClusterStore) -> Vec<&ResourceObject> {
    let mut params = ListParams::kind(RR_KIND)
        .in_namespace(RR_NAMESPACE)
        .with_label(MANAGED_BY_LABEL.0, MANAGED_BY_LABEL.1);
    params.api_version = Some(RR_API.into());
    store.list(&params)
}

/// Result of one reconcile.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReconcileReport {
    pub applied: usize,
    pub pruned: usize,
    pub status_written: bool,
}

impl ReconcileReport {
    pub fn mutations(&self) -> usize {
        self.applied + self.pruned + usize::from(self.status_written)
    }
}

/// Fetch-through cache of parsed bundles keyed by version uid.
#[derive(Default)]
pub struct BundleCache {
    bundles: BTreeMap<String, Bundle>,
}

impl BundleCache {
    pub fn get_or_fetch(
        &mut self,
        client: &dyn ControlPlaneClient,
        spec: &RemoteResourceSpec,
    ) -> Result<&Bundle, AgentError> {
        if !self.bundles.contains_key(&spec.version_uid) {
            let bytes = client
                .fetch(&spec.artifact_url)
                .map_err(|e| AgentError::FetchFailed(e.to_string()))?;
            let bundle =
                Bundle::parse(&bytes).map_err(|e| AgentError::MalformedBundle(e.to_string()))?;
            let actual = bundle.content_hash();
            if actual != spec.content_hash {
                return Err(AgentError::HashMismatch {
                    expected: spec.content_hash.clone(),
                    actual,
                });
            }
            self.bundles.insert(spec.version_uid.clone(), bundle);
        }
        Ok(&self.bundles[&spec.version_uid])
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    /// Drop bundles no longer referenced by `live` uids.
    pub fn retain(&mut self, live: &BTreeSet<String>) {
        self.bundles.retain(|uid, _| live.contains(uid));
    }
}

fn desired_objects(
    bundle: &Bundle,
    rr: &ResourceKey,
    spec: &RemoteResourceSpec,
) -> Result<Vec<ResourceObject>, AgentError> {
    let mut objs = Vec::with_capacity(bundle.documents().len());
    for doc in bundle.documents() {
        let mut o = ResourceObject::from_document(doc, DEFAULT_NAMESPACE)
            .map_err(|e| AgentError::MalformedBundle(e.to_string()))?;
        o.annotations
            .insert(SUB_ID_ANNOTATION.into(), spec.sub_id.clone());
        o.annotations
            .insert(VERSION_UID_ANNOTATION.into(), spec.version_uid.clone());
        o.owner_refs = vec![rr.clone()];
        objs.push(o);
    }
    // CRDs before the instances that may depend on them; stable otherwise.
    objs.sort_by_key(|o| o.key.kind != CRD_KIND);
    Ok(objs)
}

/// Another live subscription that already owns `key` and outranks `sub_id`.
fn conflicting_owner(store: &ClusterStore, key: &ResourceKey, sub_id: &str) -> Option<String> {
    let existing = store.find(key)?;
    let holder = existing.annotations.get(SUB_ID_ANNOTATION)?;
    (holder.as_str() < sub_id && store.contains(&rr_key(holder))).then(|| holder.clone())
}

/// Apply the bundle a RemoteResource points at, prune what it no longer
/// contains and record the outcome in its status. On failure the status
/// records the error and the workload is left as it was.
pub fn reconcile_remote_resource(
    store: &mut ClusterStore,
    cache: &mut BundleCache,
    client: &dyn ControlPlaneClient,
    key: &ResourceKey,
) -> Result<ReconcileReport, AgentError> {
    let rr = store.get(key).map_err(AgentError::Store)?.clone();
    let spec: RemoteResourceSpec = serde_json::from_value(rr.spec.clone())
        .map_err(|e| AgentError::InvalidRemoteResource(e.to_string()))?;
    let previous = RemoteResourceStatus::of(&rr);

    let attempt = (|| {
        let bundle = cache.get_or_fetch(client, &spec)?;
        let objs = desired_objects(bundle, key, &spec)?;
        for o in &objs {
            if let Some(winner) = conflicting_owner(store, &o.key, &spec.sub_id) {
                return Err(AgentError::Conflict {
                    key: o.key.clone(),
                    winner,
                });
            }
        }
        Ok(objs)
    })();

    let mut report = ReconcileReport::default();
    let status = match attempt {
        Ok(objs) => {
            let new_keys: BTreeSet<ResourceKey> = objs.iter().map(|o| o.key.clone()).collect();
            let mut failure = None;
            for o in objs {
                match store.apply(o) {
                    Ok(r) => report.applied += usize::from(r.mutated()),
                    Err(e) => {
                        failure = Some(AgentError::Store(e));
                        break;
                    }
                }
            }
            if let Some(err) = failure {
                write_failure(store, key, &previous, &err, &mut report)?;
                return Err(err);
            }
            for stale in previous
                .applied_keys
                .iter()
                .filter(|k| !new_keys.contains(k))
            {
                let ours = store
                    .find(stale)
                    .is_some_and(|o| o.annotations.get(SUB_ID_ANNOTATION) == Some(&spec.sub_id));
                if ours {
                    report.pruned += store.delete(stale).map_err(AgentError::Store)?.len();
                }
            }
            RemoteResourceStatus {
                applied_hash: Some(spec.content_hash.clone()),
                applied_version_uid: Some(spec.version_uid.clone()),
                applied_keys: new_keys.into_iter().collect(),
                phase: RemotePhase::Applied,
                last_error: None,
            }
        }
        Err(err) => {
            write_failure(store, key, &previous, &err, &mut report)?;
            return Err(err);
        }
    };
    write_status(store, key, &status, &mut report)?;
    Ok(report)
}

fn write_failure(
    store: &mut ClusterStore,
    key: &ResourceKey,
    previous: &RemoteResourceStatus,
    err: &AgentError,
    report: &mut ReconcileReport,
) -> Result<(), AgentError> {
    let status = RemoteResourceStatus {
        phase: RemotePhase::Failed,
        last_error: Some(err.to_string()),
        ..previous.clone()
    };
    write_status(store, key, &status, report)
}

fn write_status(
    store: &mut ClusterStore,
    key: &ResourceKey,
    status: &RemoteResourceStatus,
    report: &mut ReconcileReport,
) -> Result<(), AgentError> {
    let value: Value = serde_json::to_value(status).expect("status serializes");
    if store.get(key).map_err(AgentError::Store)?.status != value {
        store.update_status(key, value).map_err(AgentError::Store)?;
        report.status_written = true;
    }
    Ok(())
}
