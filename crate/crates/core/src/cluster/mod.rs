//! In-process Kubernetes-like resource store for one simulated cluster.
//!
//! Every mutation is applied atomically and recorded in an ordered event log;
//! watchers read that log. Cascade deletion through owner references is
//! synchronous.

mod api;
mod crd;
mod object;
mod watch;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use api::{ClusterApi, ClusterApiError};
pub use crd::{is_builtin, CrdDefinition, BUILTIN_KINDS, CRD_KIND};
pub use object::{DocumentError, Labels, ResourceKey, ResourceObject};
pub use watch::{EventType, WatchEvent, WatchFilter, Watcher};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown kind {kind} ({api_version})")]
    UnknownKind { api_version: String, kind: String },
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("not found: {0}")]
    NotFound(ResourceKey),
    #[error("custom resource definition already registered: {0}")]
    DuplicateCrd(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyOutcome {
    Created,
    Updated,
    Unchanged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyResult {
    pub outcome: ApplyOutcome,
    pub generation: u64,
    pub resource_version: u64,
}

impl ApplyResult {
    pub fn mutated(&self) -> bool {
        self.outcome != ApplyOutcome::Unchanged
    }
}

/// Filter for [`ClusterStore::list`]. `None` fields match everything; an
/// object matches the selector when its labels contain every selector entry.
#[derive(Clone, Debug, Default)]
pub struct ListParams {
    pub namespace: Option<String>,
    pub api_version: Option<String>,
    pub kind: Option<String>,
    pub selector: Labels,
}

impl ListParams {
    pub fn kind(kind: impl Into<String>) -> Self {
        ListParams {
            kind: Some(kind.into()),
            ..Default::default()
        }
    }

    pub fn in_namespace(mut self, ns: impl Into<String>) -> Self {
        self.namespace = Some(ns.into());
        self
    }

    pub fn with_label(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.selector.insert(k.into(), v.into());
        self
    }

    fn matches(&self, obj: &ResourceObject) -> bool {
        self.namespace
            .as_deref()
            .is_none_or(|n| n == obj.key.namespace)
            && self.kind.as_deref().is_none_or(|k| k == obj.key.kind)
            && self
                .api_version
                .as_deref()
                .is_none_or(|v| v == obj.key.api_version)
            && labels_match(&self.selector, &obj.labels)
    }
}

/// `selector ⊆ labels` as maps.
pub fn labels_match(selector: &Labels, labels: &Labels) -> bool {
    selector.iter().all(|(k, v)| labels.get(k) == Some(v))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct CrdEntry {
    def: CrdDefinition,
    /// The `CustomResourceDefinition` object that registered it, if any.
    source: Option<ResourceKey>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StoreSnapshot {
    objects: Vec<ResourceObject>,
    crds: Vec<CrdEntry>,
    sequence: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ClusterStore {
    objects: BTreeMap<ResourceKey, ResourceObject>,
    crds: BTreeMap<(String, String), CrdEntry>,
    events: Vec<WatchEvent>,
    sequence: u64,
}

impl ClusterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sequence number of the most recent event (0 when none).
    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &ResourceObject> {
        self.objects.values()
    }

    pub fn crds(&self) -> impl Iterator<Item = &CrdDefinition> {
        self.crds.values().map(|e| &e.def)
    }

    pub fn crd_for_plural(&self, plural: &str) -> Option<&CrdDefinition> {
        self.crds
            .values()
            .map(|e| &e.def)
            .find(|d| d.plural == plural)
    }

    pub fn has_crd(&self, group: &str, kind: &str) -> bool {
        self.crds
            .contains_key(&(group.to_string(), kind.to_string()))
    }

    pub fn register_crd(&mut self, def: CrdDefinition) -> Result<(), StoreError> {
        self.insert_crd(def, None)
    }

    fn insert_crd(
        &mut self,
        def: CrdDefinition,
        source: Option<ResourceKey>,
    ) -> Result<(), StoreError> {
        let id = (def.group.clone(), def.kind.clone());
        if self.crds.contains_key(&id) {
            return Err(StoreError::DuplicateCrd(format!(
                "{}.{}",
                def.kind, def.group
            )));
        }
        if self
            .crds
            .iter()
            .any(|(other_id, e)| *other_id != id && e.def.plural == def.plural)
        {
            return Err(StoreError::DuplicateCrd(format!("plural {}", def.plural)));
        }
        if is_builtin(&def.kind) {
            return Err(StoreError::DuplicateCrd(format!(
                "{} is a built-in kind",
                def.kind
            )));
        }
        self.crds.insert(id, CrdEntry { def, source });
        Ok(())
    }

    fn register_from_object(
        &mut self,
        def: CrdDefinition,
        source: &ResourceKey,
    ) -> Result<(), StoreError> {
        let id = (def.group.clone(), def.kind.clone());
        match self.crds.get(&id) {
            Some(e) if e.source.as_ref() == Some(source) => {
                if e.def == def {
                    return Ok(());
                }
                let previous = self.crds.remove(&id).expect("entry present");
                if let Err(err) = self.insert_crd(def, Some(source.clone())) {
                    self.crds.insert(id, previous);
                    return Err(err);
                }
                Ok(())
            }
            // already served by another registration with the same shape
            Some(e) if e.def == def => Ok(()),
            Some(_) => Err(StoreError::DuplicateCrd(format!(
                "{}.{}",
                def.kind, def.group
            ))),
            None => {
                let stale: Vec<_> = self
                    .crds
                    .iter()
                    .filter(|(_, e)| e.source.as_ref() == Some(source))
                    .map(|(k, _)| k.clone())
                    .collect();
                for k in stale {
                    self.crds.remove(&k);
                }
                self.insert_crd(def, Some(source.clone()))
            }
        }
    }

    fn kind_known(&self, key: &ResourceKey) -> bool {
        is_builtin(&key.kind)
            || self
                .crds
                .get(&(key.group().to_string(), key.kind.clone()))
                .is_some_and(|e| e.def.accepts(&key.api_version, &key.kind))
    }

    pub fn get(&self, key: &ResourceKey) -> Result<&ResourceObject, StoreError> {
        self.objects
            .get(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    pub fn find(&self, key: &ResourceKey) -> Option<&ResourceObject> {
        self.objects.get(key)
    }

    pub fn contains(&self, key: &ResourceKey) -> bool {
        self.objects.contains_key(key)
    }

    /// Matching objects ordered by name (ties broken by namespace, kind).
    pub fn list(&self, params: &ListParams) -> Vec<&ResourceObject> {
        let mut out: Vec<&ResourceObject> = self
            .objects
            .values()
            .filter(|o| params.matches(o))
            .collect();
        out.sort_by(|a, b| {
            (
                &a.key.name,
                &a.key.namespace,
                &a.key.kind,
                &a.key.api_version,
            )
                .cmp(&(
                    &b.key.name,
                    &b.key.namespace,
                    &b.key.kind,
                    &b.key.api_version,
                ))
        });
        out
    }

    /// Create or replace an object's spec, labels, annotations and owner
    /// references. Status is never taken from the input. `generation` bumps
    /// only when the canonical spec changes.
    pub fn apply(&mut self, obj: ResourceObject) -> Result<ApplyResult, StoreError> {
        if !obj.key.is_valid() {
            return Err(StoreError::InvalidObject(format!(
                "incomplete key {}",
                obj.key
            )));
        }
        if !self.kind_known(&obj.key) {
            return Err(StoreError::UnknownKind {
                api_version: obj.key.api_version.clone(),
                kind: obj.key.kind.clone(),
            });
        }
        if obj.key.kind == CRD_KIND {
            let def = CrdDefinition::from_object(&obj).ok_or_else(|| {
                StoreError::InvalidObject(format!("{} has no usable definition", obj.key))
            })?;
            self.register_from_object(def, &obj.key)?;
        }

        let seq = self.sequence + 1;
        let (event_type, result) = match self.objects.get_mut(&obj.key) {
            None => {
                let mut created = obj;
                created.status = Value::Null;
                created.generation = 1;
                created.resource_version = seq;
                created.deleting = false;
                let snapshot = created.clone();
                self.objects.insert(created.key.clone(), created);
                (EventType::Added, (snapshot, ApplyOutcome::Created))
            }
            Some(existing) => {
                let spec_changed = existing.spec_digest() != obj.spec_digest();
                let meta_changed = existing.labels != obj.labels
                    || existing.annotations != obj.annotations
                    || existing.owner_refs != obj.owner_refs;
                if !spec_changed && !meta_changed {
                    return Ok(ApplyResult {
                        outcome: ApplyOutcome::Unchanged,
                        generation: existing.generation,
                        resource_version: existing.resource_version,
                    });
                }
                if spec_changed {
                    existing.generation += 1;
                    existing.spec = obj.spec;
                }
                existing.labels = obj.labels;
                existing.annotations = obj.annotations;
                existing.owner_refs = obj.owner_refs;
                existing.resource_version = seq;
                (
                    EventType::Modified,
                    (existing.clone(), ApplyOutcome::Updated),
                )
            }
        };
        let (snapshot, outcome) = result;
        let res = ApplyResult {
            outcome,
            generation: snapshot.generation,
            resource_version: snapshot.resource_version,
        };
        self.record(event_type, snapshot);
        Ok(res)
    }

    /// Replace an object's status. Always bumps `resource_version`.
    pub fn update_status(
        &mut self,
        key: &ResourceKey,
        status: Value,
    ) -> Result<&ResourceObject, StoreError> {
        let seq = self.sequence + 1;
        let obj = self
            .objects
            .get_mut(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        obj.status = status;
        obj.resource_version = seq;
        let snapshot = obj.clone();
        self.record(EventType::Modified, snapshot);
        Ok(&self.objects[key])
    }

    /// Delete `key` and, transitively, everything whose owner references
    /// reach it. Returns the removed keys in deletion order.
    pub fn delete(&mut self, key: &ResourceKey) -> Result<Vec<ResourceKey>, StoreError> {
        if !self.objects.contains_key(key) {
            return Err(StoreError::NotFound(key.clone()));
        }
        let mut removed = self.remove_closure(vec![key.clone()]);
        removed.extend(self.collect_garbage());
        Ok(removed)
    }

    /// Remove objects whose owners have all vanished, repeatedly, until none
    /// remain.
    pub fn collect_garbage(&mut self) -> Vec<ResourceKey> {
        let mut removed = Vec::new();
        loop {
            let orphans: Vec<ResourceKey> = self
                .objects
                .values()
                .filter(|o| {
                    !o.owner_refs.is_empty()
                        && o.owner_refs.iter().all(|r| !self.objects.contains_key(r))
                })
                .map(|o| o.key.clone())
                .collect();
            if orphans.is_empty() {
                return removed;
            }
            removed.extend(self.remove_closure(orphans));
        }
    }

    fn remove_closure(&mut self, roots: Vec<ResourceKey>) -> Vec<ResourceKey> {
        let mut dependents: BTreeMap<&ResourceKey, Vec<&ResourceKey>> = BTreeMap::new();
        for obj in self.objects.values() {
            for owner in &obj.owner_refs {
                dependents.entry(owner).or_default().push(&obj.key);
            }
        }
        let mut order = Vec::new();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<ResourceKey> = roots.into();
        while let Some(k) = queue.pop_front() {
            if !self.objects.contains_key(&k) || !seen.insert(k.clone()) {
                continue;
            }
            if let Some(deps) = dependents.get(&k) {
                queue.extend(deps.iter().map(|d| (*d).clone()));
            }
            if k.kind == CRD_KIND {
                if let Some(entry) = self.crds.values().find(|e| e.source.as_ref() == Some(&k)) {
                    let api_version = entry.def.api_version();
                    let kind = entry.def.kind.clone();
                    queue.extend(
                        self.objects
                            .keys()
                            .filter(|o| o.kind == kind && o.api_version == api_version)
                            .cloned(),
                    );
                }
            }
            order.push(k);
        }
        for k in &order {
            if let Some(mut obj) = self.objects.remove(k) {
                obj.deleting = true;
                self.record(EventType::Deleted, obj);
            }
            if k.kind == CRD_KIND {
                self.crds.retain(|_, e| e.source.as_ref() != Some(k));
            }
        }
        order
    }

    fn record(&mut self, event_type: EventType, object: ResourceObject) {
        self.sequence += 1;
        self.events.push(WatchEvent {
            event_type,
            object,
            sequence: self.sequence,
        });
    }

    /// Recorded events with `sequence > from_sequence` matching `filter`, in
    /// order.
    pub fn watch(
        &self,
        filter: &WatchFilter,
        from_sequence: u64,
    ) -> impl Iterator<Item = &WatchEvent> + '_ {
        let filter = filter.clone();
        let start = self.events.partition_point(|e| e.sequence <= from_sequence);
        self.events[start..]
            .iter()
            .filter(move |e| filter.matches(&e.object.key))
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            objects: self.objects.values().cloned().collect(),
            crds: self.crds.values().cloned().collect(),
            sequence: self.sequence,
        }
    }

    /// Rebuild from a snapshot. The event log starts empty at the snapshot's
    /// sequence.
    pub fn from_snapshot(snapshot: StoreSnapshot) -> Self {
        ClusterStore {
            objects: snapshot
                .objects
                .into_iter()
                .map(|o| (o.key.clone(), o))
                .collect(),
            crds: snapshot
                .crds
                .into_iter()
                .map(|e| ((e.def.group.clone(), e.def.kind.clone()), e))
                .collect(),
            events: Vec::new(),
            sequence: snapshot.sequence,
        }
    }
}
