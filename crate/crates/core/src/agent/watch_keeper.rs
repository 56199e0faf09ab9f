//! Reporting of labelled resources at lite, detail or debug fidelity.

use std::collections::{BTreeMap, VecDeque};

use serde_json::{json, Map, Value};

use crate::clock::Timestamp;
use crate::cluster::{ClusterStore, EventType, ResourceKey, ResourceObject, WatchEvent};
use crate::control_plane::{ReportLevel, ReportTrigger, ResourceReport};

pub const WATCH_LABEL: &str = "razeedash/watch-resource";

/// The level an object asks for, if its watch label names a known one.
pub fn watch_level(obj: &ResourceObject) -> Option<ReportLevel> {
    obj.labels.get(WATCH_LABEL)?.parse().ok()
}

/// Lite: identity, labels, annotations, generation and status.
/// Detail: lite plus spec. Debug: the full object document.
pub fn report_payload(obj: &ResourceObject, level: ReportLevel) -> Value {
    if level == ReportLevel::Debug {
        return obj.to_document();
    }
    let status = if obj.status.is_null() {
        Value::Object(Map::new())
    } else {
        obj.status.clone()
    };
    let mut payload = json!({
        "apiVersion": obj.key.api_version,
        "kind": obj.key.kind,
        "metadata": {
            "name": obj.key.name,
            "namespace": obj.key.namespace,
            "labels": obj.labels,
            "annotations": obj.annotations,
            "generation": obj.generation,
        },
        "status": status,
    });
    if level == ReportLevel::Detail {
        payload["spec"] = obj.spec.clone();
    }
    payload
}

pub fn report_for(
    cluster_id: &str,
    obj: &ResourceObject,
    now: Timestamp,
    trigger: ReportTrigger,
) -> Option<ResourceReport> {
    let level = watch_level(obj)?;
    Some(ResourceReport {
        cluster_id: cluster_id.to_string(),
        resource_key: obj.key.clone(),
        level,
        payload: report_payload(obj, level),
        observed_at: now,
        trigger,
    })
}

/// One interval report per labelled object, in key order. Objects being
/// deleted are skipped.
pub fn scan(cluster_id: &str, store: &ClusterStore, now: Timestamp) -> Vec<ResourceReport> {
    store
        .objects()
        .filter(|o| !o.deleting)
        .filter_map(|o| report_for(cluster_id, o, now, ReportTrigger::Interval))
        .collect()
}

/// Per-key leading-edge debounce for event reports plus the bounded outbox.
#[derive(Debug)]
pub struct WatchKeeper {
    cluster_id: String,
    debounce: u64,
    last_event_report: BTreeMap<ResourceKey, Timestamp>,
    outbox: VecDeque<ResourceReport>,
    limit: usize,
    dropped: u64,
}

impl WatchKeeper {
    pub fn new(cluster_id: impl Into<String>, debounce: u64, limit: usize) -> Self {
        WatchKeeper {
            cluster_id: cluster_id.into(),
            debounce,
            last_event_report: BTreeMap::new(),
            outbox: VecDeque::new(),
            limit: limit.max(1),
            dropped: 0,
        }
    }

    /// An event report unless the object is unlabelled, deleted, or was
    /// reported by an event less than `debounce` seconds ago.
    pub fn on_event(&mut self, ev: &WatchEvent, now: Timestamp) -> Option<ResourceReport> {
        if ev.event_type == EventType::Deleted {
            self.last_event_report.remove(&ev.object.key);
            return None;
        }
        watch_level(&ev.object)?;
        if let Some(last) = self.last_event_report.get(&ev.object.key) {
            if now < last + self.debounce {
                return None;
            }
        }
        self.last_event_report.insert(ev.object.key.clone(), now);
        report_for(&self.cluster_id, &ev.object, now, ReportTrigger::Event)
    }

    /// Queue reports, dropping the oldest beyond the limit.
    pub fn enqueue(&mut self, reports: impl IntoIterator<Item = ResourceReport>) {
        for r in reports {
            if self.outbox.len() == self.limit {
                self.outbox.pop_front();
                self.dropped += 1;
            }
            self.outbox.push_back(r);
        }
    }

    pub fn outbox_len(&self) -> usize {
        self.outbox.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn take_outbox(&mut self) -> Vec<ResourceReport> {
        self.outbox.drain(..).collect()
    }

    /// Put back reports that failed to send, ahead of anything newer.
    pub fn restore(&mut self, reports: Vec<ResourceReport>) {
        let newer: Vec<ResourceReport> = self.outbox.drain(..).collect();
        self.enqueue(reports);
        self.enqueue(newer);
    }
}
