use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::clock::Timestamp;
use crate::cluster::{ClusterStore, ResourceKey, WatchFilter};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReconcileResult {
    Done,
    /// Reconcile again after this many seconds; 0 means the next pass.
    Requeue(u64),
    Error(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconcileOutcome {
    pub result: ReconcileResult,
    /// Store mutations performed.
    pub actions_taken: usize,
}

impl ReconcileOutcome {
    pub fn done(actions_taken: usize) -> Self {
        ReconcileOutcome {
            result: ReconcileResult::Done,
            actions_taken,
        }
    }

    pub fn requeue(after: u64, actions_taken: usize) -> Self {
        ReconcileOutcome {
            result: ReconcileResult::Requeue(after),
            actions_taken,
        }
    }

    pub fn error(message: impl Into<String>, actions_taken: usize) -> Self {
        ReconcileOutcome {
            result: ReconcileResult::Error(message.into()),
            actions_taken,
        }
    }
}

/// A level-triggered controller for one watched kind.
pub trait Reconciler: Send {
    fn name(&self) -> &str;

    /// The kind this controller owns exclusively.
    fn watched(&self) -> WatchFilter;

    /// Kinds whose events re-enqueue their owner of the watched kind.
    fn owned_kinds(&self) -> Vec<String> {
        Vec::new()
    }

    fn reconcile(
        &mut self,
        store: &mut ClusterStore,
        key: &ResourceKey,
        now: Timestamp,
    ) -> ReconcileOutcome;
}

/// Delay before the n-th consecutive retry: `initial * multiplier^(n-1)`,
/// capped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backoff {
    pub initial: u64,
    pub multiplier: u64,
    pub cap: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial: 1,
            multiplier: 2,
            cap: 60,
        }
    }
}

impl Backoff {
    pub fn delay(&self, failures: u32) -> u64 {
        let mut d = self.initial.max(1);
        for _ in 1..failures {
            d = d.saturating_mul(self.multiplier.max(1));
            if d >= self.cap {
                return self.cap;
            }
        }
        d.min(self.cap)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoopStats {
    pub reconciles: u64,
    pub actions: u64,
    pub errors: u64,
    pub panics: u64,
}

/// Dedup work queue plus event cursor for one [`Reconciler`].
pub struct ControllerLoop {
    reconciler: Box<dyn Reconciler>,
    backoff: Backoff,
    filter: WatchFilter,
    owned: Vec<String>,
    cursor: u64,
    /// key → earliest time it may run
    queue: BTreeMap<ResourceKey, Timestamp>,
    failures: BTreeMap<ResourceKey, u32>,
    stats: LoopStats,
}

impl ControllerLoop {
    /// Starts with every existing object of the watched kind queued.
    pub fn new(
        reconciler: Box<dyn Reconciler>,
        backoff: Backoff,
        store: &ClusterStore,
        now: Timestamp,
    ) -> Self {
        let filter = reconciler.watched();
        let owned = reconciler.owned_kinds();
        let mut l = ControllerLoop {
            reconciler,
            backoff,
            filter,
            owned,
            cursor: store.sequence(),
            queue: BTreeMap::new(),
            failures: BTreeMap::new(),
            stats: LoopStats::default(),
        };
        l.resync(store, now);
        l
    }

    pub fn name(&self) -> &str {
        self.reconciler.name()
    }

    pub fn watched(&self) -> &WatchFilter {
        &self.filter
    }

    pub fn stats(&self) -> LoopStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_due(&self) -> Option<Timestamp> {
        self.queue.values().min().copied()
    }

    /// Queue `key` to run no earlier than `at`; an earlier entry wins.
    pub fn enqueue(&mut self, key: ResourceKey, at: Timestamp) {
        self.queue
            .entry(key)
            .and_modify(|t| *t = (*t).min(at))
            .or_insert(at);
    }

    pub fn resync(&mut self, store: &ClusterStore, now: Timestamp) {
        let keys: Vec<ResourceKey> = store
            .objects()
            .filter(|o| self.filter.matches(&o.key))
            .map(|o| o.key.clone())
            .collect();
        for k in keys {
            self.enqueue(k, now);
        }
    }

    /// Consume store events since the last call.
    pub fn observe(&mut self, store: &ClusterStore, now: Timestamp) {
        let mut keys = Vec::new();
        for ev in store.watch(&WatchFilter::all(), self.cursor) {
            if self.filter.matches(&ev.object.key) {
                keys.push(ev.object.key.clone());
            } else if self.owned.contains(&ev.object.key.kind) {
                keys.extend(
                    ev.object
                        .owner_refs
                        .iter()
                        .filter(|o| self.filter.matches(o))
                        .cloned(),
                );
            }
        }
        self.cursor = store.sequence();
        for k in keys {
            self.enqueue(k, now);
        }
    }

    /// Reconcile every key due at `now`, each at most once. Keys requeued
    /// during the pass wait for the next one.
    pub fn step(&mut self, store: &mut ClusterStore, now: Timestamp) -> PassStats {
        let due: Vec<ResourceKey> = self
            .queue
            .iter()
            .filter(|(_, t)| **t <= now)
            .map(|(k, _)| k.clone())
            .collect();
        let mut pass = PassStats::default();
        for key in due {
            self.queue.remove(&key);
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                self.reconciler.reconcile(store, &key, now)
            }))
            .unwrap_or_else(|_| {
                self.stats.panics += 1;
                ReconcileOutcome::error("reconciler panicked", 0)
            });
            pass.reconciles += 1;
            pass.actions += outcome.actions_taken;
            self.stats.reconciles += 1;
            self.stats.actions += outcome.actions_taken as u64;
            match outcome.result {
                ReconcileResult::Done => {
                    self.failures.remove(&key);
                }
                ReconcileResult::Requeue(after) => {
                    self.failures.remove(&key);
                    self.enqueue(key, now + after);
                }
                ReconcileResult::Error(msg) => {
                    self.stats.errors += 1;
                    pass.errors += 1;
                    let n = self.failures.entry(key.clone()).or_insert(0);
                    *n += 1;
                    let delay = self.backoff.delay(*n);
                    tracing::debug!(controller = self.reconciler.name(), %key, %msg, delay, "reconcile failed");
                    self.enqueue(key, now + delay);
                }
            }
        }
        pass
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassStats {
    pub reconciles: usize,
    pub actions: usize,
    pub errors: usize,
}

impl PassStats {
    fn add(&mut self, o: PassStats) {
        self.reconciles += o.reconciles;
        self.actions += o.actions;
        self.errors += o.errors;
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OperatorError {
    #[error("{kind} is already watched by controller {existing}")]
    DuplicateController { kind: String, existing: String },
    #[error("no fixed point after {passes} passes")]
    NotQuiescent { passes: usize },
}

/// The controllers of one cluster, run in registration order.
#[derive(Default)]
pub struct ControllerManager {
    loops: Vec<ControllerLoop>,
}

impl ControllerManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, l: ControllerLoop) -> Result<(), OperatorError> {
        if let Some(existing) = self.loops.iter().find(|x| x.watched() == l.watched()) {
            return Err(OperatorError::DuplicateController {
                kind: l.watched().kind.clone().unwrap_or_default(),
                existing: existing.name().to_string(),
            });
        }
        self.loops.push(l);
        Ok(())
    }

    pub fn unregister(&mut self, name: &str) -> Option<ControllerLoop> {
        let i = self.loops.iter().position(|l| l.name() == name)?;
        Some(self.loops.remove(i))
    }

    pub fn get(&self, name: &str) -> Option<&ControllerLoop> {
        self.loops.iter().find(|l| l.name() == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.loops.iter().map(|l| l.name().to_string()).collect()
    }

    /// One pass: every controller observes new events, then reconciles its
    /// due keys.
    pub fn run_pass(&mut self, store: &mut ClusterStore, now: Timestamp) -> PassStats {
        let mut total = PassStats::default();
        for l in &mut self.loops {
            l.observe(store, now);
            total.add(l.step(store, now));
        }
        total
    }

    /// Observe pending events and report whether any key is due at `now`.
    pub fn has_work(&mut self, store: &ClusterStore, now: Timestamp) -> bool {
        for l in &mut self.loops {
            l.observe(store, now);
        }
        self.loops
            .iter()
            .any(|l| l.next_due().is_some_and(|t| t <= now))
    }

    /// Run passes until nothing is due at `now` and no new events are
    /// pending. Returns the number of passes run.
    pub fn run_to_quiescence(
        &mut self,
        store: &mut ClusterStore,
        now: Timestamp,
        max_passes: usize,
    ) -> Result<usize, OperatorError> {
        let mut passes = 0;
        while self.has_work(store, now) {
            if passes == max_passes {
                return Err(OperatorError::NotQuiescent { passes });
            }
            self.run_pass(store, now);
            passes += 1;
        }
        Ok(passes)
    }

    pub fn next_due(&self) -> Option<Timestamp> {
        self.loops.iter().filter_map(ControllerLoop::next_due).min()
    }
}
