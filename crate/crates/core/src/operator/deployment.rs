//! Deployment → Pod controller.
//!
//! Pods are named `{deployment}-{ordinal}` for ordinals `0..replicas`, carry
//! the template's labels plus `pod-template-hash`, and are owned by the
//! Deployment. Pods start `Running`. A pod whose hash differs from the
//! current template is replaced, one per pass; missing or non-running pods
//! are replaced immediately.

use serde_json::{json, Value};

use super::{ReconcileOutcome, Reconciler};
use crate::clock::Timestamp;
use crate::cluster::{
    ClusterStore, ListParams, ResourceKey, ResourceObject, StoreError, WatchFilter,
};
use crate::hash::value_digest;

pub const POD_TEMPLATE_HASH: &str = "pod-template-hash";
pub const DEPLOYMENT_API: &str = "apps/v1";

pub fn deployment_key(namespace: &str, name: &str) -> ResourceKey {
    ResourceKey::new(DEPLOYMENT_API, "Deployment", namespace, name)
}

pub fn pod_key(namespace: &str, name: &str) -> ResourceKey {
    ResourceKey::new("v1", "Pod", namespace, name)
}

/// First 10 hex digits of the canonical template digest.
pub fn template_hash(template: &Value) -> String {
    value_digest(template)[..10].to_string()
}

/// Pods owned by `deployment`, by name.
pub fn owned_pods<'a>(
    store: &'a ClusterStore,
    deployment: &ResourceKey,
) -> Vec<&'a ResourceObject> {
    store
        .list(&ListParams::kind("Pod").in_namespace(&deployment.namespace))
        .into_iter()
        .filter(|p| p.is_owned_by(deployment))
        .collect()
}

fn ordinal_of(dep: &str, pod: &str) -> Option<u64> {
    let rest = pod.strip_prefix(dep)?.strip_prefix('-')?;
    if rest.is_empty() || (rest.len() > 1 && rest.starts_with('0')) {
        return None;
    }
    rest.parse().ok()
}

#[derive(Default)]
pub struct DeploymentController;

impl DeploymentController {
    pub const NAME: &'static str = "deployment-controller";

    fn desired_pod(
        dep: &ResourceObject,
        ordinal: u64,
        template: &Value,
        hash: &str,
    ) -> ResourceObject {
        let mut pod = ResourceObject::new(
            pod_key(&dep.key.namespace, &format!("{}-{ordinal}", dep.key.name)),
            template.get("spec").cloned().unwrap_or(Value::Null),
        )
        .with_owner(dep.key.clone());
        let meta = template.get("metadata");
        for (field, target) in [
            ("labels", &mut pod.labels),
            ("annotations", &mut pod.annotations),
        ] {
            if let Some(m) = meta.and_then(|m| m.get(field)).and_then(Value::as_object) {
                for (k, v) in m {
                    target.insert(
                        k.clone(),
                        v.as_str()
                            .map(String::from)
                            .unwrap_or_else(|| v.to_string()),
                    );
                }
            }
        }
        pod.labels.insert(POD_TEMPLATE_HASH.into(), hash.into());
        pod
    }

    /// Apply `pod` and mark it running. Returns mutations performed.
    fn start(store: &mut ClusterStore, pod: ResourceObject) -> Result<usize, StoreError> {
        let key = pod.key.clone();
        let mut n = usize::from(store.apply(pod)?.mutated());
        if store.get(&key)?.phase() != Some("Running") {
            store.update_status(&key, json!({"phase": "Running"}))?;
            n += 1;
        }
        Ok(n)
    }

    fn run(store: &mut ClusterStore, key: &ResourceKey) -> Result<ReconcileOutcome, StoreError> {
        let Some(dep) = store.find(key).cloned() else {
            return Ok(ReconcileOutcome::done(0));
        };
        let replicas = dep
            .spec
            .get("replicas")
            .and_then(Value::as_u64)
            .unwrap_or(1);
        let template = dep.spec.get("template").cloned().unwrap_or(Value::Null);
        let hash = template_hash(&template);
        let mut actions = 0;

        let pods: Vec<ResourceObject> = owned_pods(store, key).into_iter().cloned().collect();
        let mut slots: Vec<Option<ResourceObject>> = vec![None; replicas as usize];
        for pod in pods {
            match ordinal_of(&key.name, &pod.key.name).filter(|o| *o < replicas) {
                Some(o) => slots[o as usize] = Some(pod),
                None => {
                    if store.contains(&pod.key) {
                        actions += store.delete(&pod.key)?.len();
                    }
                }
            }
        }

        let mut rolled = false;
        let mut stale_left = false;
        for (ordinal, slot) in slots.iter().enumerate() {
            let desired = Self::desired_pod(&dep, ordinal as u64, &template, &hash);
            match slot {
                Some(p) if p.labels.get(POD_TEMPLATE_HASH) != Some(&hash) => {
                    if rolled {
                        stale_left = true;
                        continue;
                    }
                    rolled = true;
                    actions += store.delete(&p.key)?.len();
                    actions += Self::start(store, desired)?;
                }
                Some(p) if p.phase() != Some("Running") => {
                    actions += store.delete(&p.key)?.len();
                    actions += Self::start(store, desired)?;
                }
                _ => actions += Self::start(store, desired)?,
            }
        }

        let pods = owned_pods(store, key);
        let ready = pods.iter().filter(|p| p.phase() == Some("Running")).count() as u64;
        let updated = pods
            .iter()
            .filter(|p| p.labels.get(POD_TEMPLATE_HASH) == Some(&hash))
            .count() as u64;
        let available = ready == replicas && updated == replicas;
        let status = json!({
            "replicas": pods.len(),
            "readyReplicas": ready,
            "updatedReplicas": updated,
            "observedGeneration": dep.generation,
            "templateHash": hash,
            "phase": if available { "Available" } else { "Progressing" },
        });
        if store.get(key)?.status != status {
            store.update_status(key, status)?;
            actions += 1;
        }
        Ok(if stale_left {
            ReconcileOutcome::requeue(0, actions)
        } else {
            ReconcileOutcome::done(actions)
        })
    }
}

impl Reconciler for DeploymentController {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn watched(&self) -> WatchFilter {
        WatchFilter {
            api_version: Some(DEPLOYMENT_API.into()),
            kind: Some("Deployment".into()),
        }
    }

    fn owned_kinds(&self) -> Vec<String> {
        vec!["Pod".into()]
    }

    fn reconcile(
        &mut self,
        store: &mut ClusterStore,
        key: &ResourceKey,
        _now: Timestamp,
    ) -> ReconcileOutcome {
        Self::run(store, key).unwrap_or_else(|e| ReconcileOutcome::error(e.to_string(), 0))
    }
}
