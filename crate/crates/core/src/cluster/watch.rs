use serde::{Deserialize, Serialize};

use super::object::{ResourceKey, ResourceObject};
use super::ClusterStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventType {
    Added,
    Modified,
    Deleted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatchEvent {
    #[serde(rename = "type")]
    pub event_type: EventType,
    pub object: ResourceObject,
    pub sequence: u64,
}

/// Which objects a watch observes. Empty fields match everything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WatchFilter {
    pub api_version: Option<String>,
    pub kind: Option<String>,
}

impl WatchFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn kind(kind: impl Into<String>) -> Self {
        WatchFilter {
            api_version: None,
            kind: Some(kind.into()),
        }
    }

    pub fn matches(&self, key: &ResourceKey) -> bool {
        self.kind.as_deref().is_none_or(|k| k == key.kind)
            && self
                .api_version
                .as_deref()
                .is_none_or(|v| v == key.api_version)
    }
}

/// A resumable cursor over a store's event log. Each call to [`Watcher::poll`]
/// yields the events recorded since the previous call, in sequence order.
#[derive(Clone, Debug)]
pub struct Watcher {
    filter: WatchFilter,
    cursor: u64,
}

impl Watcher {
    pub fn new(filter: WatchFilter, from_sequence: u64) -> Self {
        Watcher {
            filter,
            cursor: from_sequence,
        }
    }

    /// Start at the store's current sequence: only future events.
    pub fn from_now(filter: WatchFilter, store: &ClusterStore) -> Self {
        Self::new(filter, store.sequence())
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn poll(&mut self, store: &ClusterStore) -> Vec<WatchEvent> {
        let events: Vec<WatchEvent> = store.watch(&self.filter, self.cursor).cloned().collect();
        self.cursor = self.cursor.max(store.sequence());
        events
    }
}
