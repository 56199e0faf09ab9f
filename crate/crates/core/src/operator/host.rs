use super::*;
use crate::clock::Timestamp;
use crate::cluster::{ClusterStore, ListParams, ResourceKey};

/// The running operator as seen in the store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorIdentity {
    pub pod: ResourceKey,
    pub version: String,
}

/// All controllers of one simulated cluster: the built-in deployment
/// controller, always, and the Nginx operator while its pod is running.
///
/// A change of operator pod or version replaces the Nginx controller and
/// resyncs every `Nginx` resource.
pub struct OperatorHost {
    manager: ControllerManager,
    backoff: Backoff,
    operator: Option<OperatorIdentity>,
}

pub const MAX_PASSES: usize = 256;

impl OperatorHost {
    pub fn new(store: &ClusterStore, now: Timestamp) -> Self {
        Self::with_backoff(store, now, Backoff::default())
    }

    pub fn with_backoff(store: &ClusterStore, now: Timestamp, backoff: Backoff) -> Self {
        let mut manager = ControllerManager::new();
        manager
            .register(ControllerLoop::new(
                Box::new(DeploymentController),
                backoff,
                store,
                now,
            ))
            .expect("empty manager");
        let mut host = OperatorHost {
            manager,
            backoff,
            operator: None,
        };
        host.refresh_operator(store, now);
        host
    }

    pub fn operator(&self) -> Option<&OperatorIdentity> {
        self.operator.as_ref()
    }

    pub fn manager(&self) -> &ControllerManager {
        &self.manager
    }

    pub fn detect_operator(store: &ClusterStore) -> Option<OperatorIdentity> {
        let crd = nginx_crd();
        if !store.has_crd(&crd.group, &crd.kind) {
            return None;
        }
        let (k, v) = OPERATOR_APP_LABEL;
        store
            .list(&ListParams::kind("Pod").with_label(k, v))
            .into_iter()
            .find(|p| p.phase() == Some("Running") && !p.deleting)
            .and_then(|p| {
                Some(OperatorIdentity {
                    pod: p.key.clone(),
                    version: p.annotations.get(VERSION_ANNOTATION)?.clone(),
                })
            })
    }

    fn refresh_operator(&mut self, store: &ClusterStore, now: Timestamp) {
        let current = Self::detect_operator(store);
        if current == self.operator {
            return;
        }
        self.manager.unregister(NginxReconciler::NAME);
        if let Some(id) = &current {
            tracing::debug!(version = %id.version, pod = %id.pod, "nginx operator started");
            let l = ControllerLoop::new(
                Box::new(NginxReconciler::new(id.version.clone())),
                self.backoff,
                store,
                now,
            );
            self.manager
                .register(l)
                .expect("nginx controller was unregistered");
        }
        self.operator = current;
    }

    pub fn run_pass(&mut self, store: &mut ClusterStore, now: Timestamp) -> PassStats {
        self.refresh_operator(store, now);
        let stats = self.manager.run_pass(store, now);
        self.refresh_operator(store, now);
        stats
    }

    /// Run passes until every controller is idle at `now`.
    pub fn run_to_quiescence(
        &mut self,
        store: &mut ClusterStore,
        now: Timestamp,
    ) -> Result<usize, OperatorError> {
        let mut passes = 0;
        loop {
            self.refresh_operator(store, now);
            if !self.manager.has_work(store, now) {
                return Ok(passes);
            }
            if passes == MAX_PASSES {
                return Err(OperatorError::NotQuiescent { passes });
            }
            self.manager.run_pass(store, now);
            passes += 1;
        }
    }

    /// Earliest scheduled retry, if any.
    pub fn next_due(&self) -> Option<Timestamp> {
        self.manager.next_due()
    }
}
