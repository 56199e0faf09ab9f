//! The per-cluster agent: subscription poller, RemoteResource controller and
//! watch keeper, driven by [`Agent::tick`] on a logical clock.
//!
//! Work is due once per interval boundary, where boundaries are
//! `start + k * interval` and `start` is the first tick. A failed
//! RemoteResource retries with exponential backoff between polls, capped at
//! the poll interval.

mod client;
mod config;
mod remote;
mod watch_keeper;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub use client::*;
pub use config::*;
pub use remote::*;
pub use watch_keeper::*;

use crate::clock::Timestamp;
use crate::cluster::{ApplyOutcome, ClusterStore, ResourceKey, StoreError, WatchFilter};
use crate::control_plane::ReportBatch;
use crate::hash::ContentHash;

pub const RETRY_BASE: u64 = 5;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("control plane unreachable: {0}")]
    ControlPlaneUnreachable(String),
    #[error("control plane rejected request: {0}")]
    ControlPlane(ClientError),
    #[error("artifact fetch failed: {0}")]
    FetchFailed(String),
    #[error("artifact hash mismatch: expected {expected}, got {actual}")]
    HashMismatch {
        expected: ContentHash,
        actual: ContentHash,
    },
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("Conflict: {key} is owned by subscription {winner}")]
    Conflict { key: ResourceKey, winner: String },
    #[error("invalid RemoteResource: {0}")]
    InvalidRemoteResource(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<ClientError> for AgentError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Unreachable(m) => AgentError::ControlPlaneUnreachable(m),
            other => AgentError::ControlPlane(other),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SyncResult {
    pub created: usize,
    pub updated: usize,
    pub pruned: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TickSummary {
    pub now: Timestamp,
    pub synced: bool,
    pub sync: SyncResult,
    pub reconciled: usize,
    /// Store mutations made by RemoteResource reconciles.
    pub mutations: usize,
    pub scanned: bool,
    pub event_reports: usize,
    pub reports_sent: usize,
    pub errors: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
struct Retry {
    failures: u32,
    at: Timestamp,
}

pub struct Agent {
    config: AgentConfig,
    start: Option<Timestamp>,
    last_poll_slot: Option<u64>,
    last_report_slot: Option<u64>,
    registered: bool,
    cache: BundleCache,
    retries: BTreeMap<ResourceKey, Retry>,
    watch_cursor: u64,
    keeper: WatchKeeper,
    last_error: Option<String>,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Self {
        let keeper = WatchKeeper::new(
            config.cluster_id.clone(),
            config.watch_debounce,
            config.outbox_limit,
        );
        Agent {
            config,
            start: None,
            last_poll_slot: None,
            last_report_slot: None,
            registered: false,
            cache: BundleCache::default(),
            retries: BTreeMap::new(),
            watch_cursor: 0,
            keeper,
            last_error: None,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn cluster_id(&self) -> &str {
        &self.config.cluster_id
    }

    pub fn last_error(&self) -> Option<&str> {
        self.last_error.as_deref()
    }

    pub fn keeper(&self) -> &WatchKeeper {
        &self.keeper
    }

    pub fn is_registered(&self) -> bool {
        self.registered
    }

    fn ensure_crd(store: &mut ClusterStore) -> Result<(), AgentError> {
        let crd = remote_resource_crd();
        if !store.has_crd(&crd.group, &crd.kind) {
            store.register_crd(crd).map_err(AgentError::Store)?;
        }
        Ok(())
    }

    /// Mirror the control plane's handouts as RemoteResources: upsert one per
    /// subscription, delete those whose subscription vanished. On failure
    /// nothing in the store changes.
    pub fn sync_subscriptions(
        &mut self,
        client: &dyn ControlPlaneClient,
        store: &mut ClusterStore,
    ) -> Result<SyncResult, AgentError> {
        let handouts = client.poll(&self.config.cluster_id, &self.config.tags)?;
        Self::ensure_crd(store)?;
        let mut result = SyncResult::default();
        let mut wanted = BTreeSet::new();
        for h in &handouts {
            let rr = remote_resource(h);
            wanted.insert(rr.key.clone());
            match store.apply(rr).map_err(AgentError::Store)?.outcome {
                ApplyOutcome::Created => result.created += 1,
                ApplyOutcome::Updated => result.updated += 1,
                ApplyOutcome::Unchanged => {}
            }
        }
        let stale: Vec<ResourceKey> = managed_remote_resources(store)
            .into_iter()
            .filter(|o| !wanted.contains(&o.key))
            .map(|o| o.key.clone())
            .collect();
        for key in stale {
            store.delete(&key).map_err(AgentError::Store)?;
            self.retries.remove(&key);
            result.pruned += 1;
        }
        let live: BTreeSet<String> = handouts.iter().map(|h| h.version_uid.clone()).collect();
        self.cache.retain(&live);
        Ok(result)
    }

    pub fn reconcile(
        &mut self,
        client: &dyn ControlPlaneClient,
        store: &mut ClusterStore,
        key: &ResourceKey,
        now: Timestamp,
    ) -> Result<ReconcileReport, AgentError> {
        let res = reconcile_remote_resource(store, &mut self.cache, client, key);
        match &res {
            Ok(_) => {
                self.retries.remove(key);
            }
            Err(_) => {
                let failures = self.retries.get(key).map_or(1, |r| r.failures + 1);
                let delay = RETRY_BASE
                    .saturating_mul(1u64 << (failures - 1).min(32))
                    .min(self.config.poll_interval);
                self.retries.insert(
                    key.clone(),
                    Retry {
                        failures,
                        at: now + delay,
                    },
                );
            }
        }
        res
    }

    /// Interval reports for every labelled object.
    pub fn watch_keeper_scan(&self, store: &ClusterStore, now: Timestamp) -> ReportBatch {
        ReportBatch {
            cluster_id: self.config.cluster_id.clone(),
            reports: scan(&self.config.cluster_id, store, now),
            sent_at: now,
        }
    }

    fn slot(&self, now: Timestamp, interval: u64) -> u64 {
        now.saturating_sub(self.start.unwrap_or(now)) / interval
    }

    /// Earliest time at which [`Agent::tick`] has work.
    pub fn next_wake(&self) -> Timestamp {
        let Some(start) = self.start else { return 0 };
        let next =
            |last: Option<u64>, interval: u64| start + (last.map_or(0, |s| s + 1)) * interval;
        let mut t = next(self.last_poll_slot, self.config.poll_interval)
            .min(next(self.last_report_slot, self.config.report_interval));
        if let Some(r) = self.retries.values().map(|r| r.at).min() {
            t = t.min(r);
        }
        t
    }

    /// Run everything due at `now`.
    pub fn tick(
        &mut self,
        client: &dyn ControlPlaneClient,
        store: &mut ClusterStore,
        now: Timestamp,
    ) -> TickSummary {
        if self.start.is_none() {
            self.start = Some(now);
            self.watch_cursor = store.sequence();
        }
        let mut summary = TickSummary {
            now,
            ..Default::default()
        };
        let fail = |summary: &mut TickSummary, e: &AgentError| summary.errors.push(e.to_string());

        let poll_slot = self.slot(now, self.config.poll_interval);
        let mut to_reconcile: Vec<ResourceKey> = Vec::new();
        if self.last_poll_slot != Some(poll_slot) {
            self.last_poll_slot = Some(poll_slot);
            summary.synced = true;
            let synced = if self.registered {
                Ok(())
            } else {
                client
                    .register(&self.config.cluster_id, &self.config.tags)
                    .map_err(AgentError::from)
            }
            .and_then(|_| {
                self.registered = true;
                self.sync_subscriptions(client, store)
            });
            match synced {
                Ok(r) => {
                    summary.sync = r;
                    to_reconcile = managed_remote_resources(store)
                        .into_iter()
                        .map(|o| o.key.clone())
                        .collect();
                }
                Err(e) => fail(&mut summary, &e),
            }
        }
        for (k, r) in &self.retries {
            if r.at <= now && !to_reconcile.contains(k) && store.contains(k) {
                to_reconcile.push(k.clone());
            }
        }
        to_reconcile.sort();
        for key in to_reconcile {
            summary.reconciled += 1;
            match self.reconcile(client, store, &key, now) {
                Ok(r) => summary.mutations += r.mutations(),
                Err(e) => fail(&mut summary, &e),
            }
        }

        let events: Vec<_> = store
            .watch(&WatchFilter::all(), self.watch_cursor)
            .cloned()
            .collect();
        self.watch_cursor = store.sequence();
        let event_reports: Vec<_> = events
            .iter()
            .filter_map(|ev| self.keeper.on_event(ev, now))
            .collect();
        summary.event_reports = event_reports.len();
        self.keeper.enqueue(event_reports);

        let report_slot = self.slot(now, self.config.report_interval);
        if self.last_report_slot != Some(report_slot) {
            self.last_report_slot = Some(report_slot);
            summary.scanned = true;
            self.keeper
                .enqueue(scan(&self.config.cluster_id, store, now));
        }

        if self.keeper.outbox_len() > 0 && self.registered {
            let reports = self.keeper.take_outbox();
            let batch = ReportBatch {
                cluster_id: self.config.cluster_id.clone(),
                reports,
                sent_at: now,
            };
            match client.send_reports(&batch) {
                Ok(n) => summary.reports_sent = n,
                Err(e) => {
                    if matches!(e, ClientError::Unreachable(_)) {
                        self.keeper.restore(batch.reports);
                    }
                    fail(&mut summary, &AgentError::from(e));
                }
            }
        }

        if let Some(e) = summary.errors.last() {
            self.last_error = Some(e.clone());
        } else if summary.synced {
            self.last_error = None;
        }
        summary
    }
}

#[cfg(test)]
mod tests;
