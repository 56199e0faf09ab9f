//! The reference application operator and the bundle that installs it.
//!
//! An `Nginx` custom resource becomes a Deployment, a Service and, when
//! `spec.ingress.enabled`, a Route, all owned by the resource. The workload
//! version is the running operator's version unless `spec.version` pins one;
//! it is stamped into the pod template and surfaces as
//! `status.servedVersion` once the Deployment has fully rolled out.

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ReconcileOutcome, Reconciler, DEPLOYMENT_API};
use crate::bundle::Bundle;
use crate::clock::Timestamp;
use crate::cluster::{
    ClusterStore, CrdDefinition, ResourceKey, ResourceObject, StoreError, WatchFilter,
};

pub const NGINX_GROUP: &str = "example.com";
pub const NGINX_VERSION: &str = "v1alpha1";
pub const NGINX_KIND: &str = "Nginx";
pub const NGINX_PLURAL: &str = "nginxes";
pub const NGINX_API: &str = "example.com/v1alpha1";

pub const OPERATOR_NAME: &str = "nginx-operator";
pub const OPERATOR_NAMESPACE: &str = "nginx-operator";
/// Label selecting the operator's pods.
pub const OPERATOR_APP_LABEL: (&str, &str) = ("app", OPERATOR_NAME);
/// Annotation carrying the operator (and workload) version.
pub const VERSION_ANNOTATION: &str = "version";
pub const WATCH_LABEL: &str = "razeedash/watch-resource";

pub fn nginx_crd() -> CrdDefinition {
    CrdDefinition::new(NGINX_GROUP, NGINX_VERSION, NGINX_KIND, NGINX_PLURAL)
}

pub fn nginx_key(namespace: &str, name: &str) -> ResourceKey {
    ResourceKey::new(NGINX_API, NGINX_KIND, namespace, name)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
pub struct IngressSpec {
    #[serde(default)]
    pub enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NginxSpec {
    #[serde(default = "one")]
    pub replica_count: u64,
    #[serde(default)]
    pub ingress: IngressSpec,
    #[serde(default)]
    pub version: Option<String>,
}

fn one() -> u64 {
    1
}

/// An `Nginx` resource document.
pub fn nginx_instance(
    namespace: &str,
    name: &str,
    replica_count: u64,
    ingress: bool,
) -> ResourceObject {
    ResourceObject::new(
        nginx_key(namespace, name),
        json!({"replicaCount": replica_count, "ingress": {"enabled": ingress}}),
    )
}

pub struct NginxReconciler {
    operator_version: String,
}

impl NginxReconciler {
    pub const NAME: &'static str = "nginx-operator";

    pub fn new(operator_version: impl Into<String>) -> Self {
        NginxReconciler {
            operator_version: operator_version.into(),
        }
    }

    pub fn operator_version(&self) -> &str {
        &self.operator_version
    }

    fn children(cr: &ResourceObject, spec: &NginxSpec, version: &str) -> Vec<ResourceObject> {
        let ns = &cr.key.namespace;
        let name = &cr.key.name;
        let mut dep = ResourceObject::new(
            ResourceKey::new(DEPLOYMENT_API, "Deployment", ns, name),
            json!({
                "replicas": spec.replica_count,
                "selector": {"matchLabels": {"app": name}},
                "template": {
                    "metadata": {"labels": {"app": name}, "annotations": {VERSION_ANNOTATION: version}},
                    "spec": {"containers": [{
                        "name": "nginx",
                        "image": format!("nginx-welcome:{version}"),
                        "ports": [{"containerPort": 8080}],
                    }]},
                },
            }),
        );
        dep.annotations
            .insert(VERSION_ANNOTATION.into(), version.into());
        let svc = ResourceObject::new(
            ResourceKey::new("v1", "Service", ns, name),
            json!({"selector": {"app": name}, "ports": [{"port": 80, "targetPort": 8080}]}),
        );
        let mut out = vec![dep, svc];
        if spec.ingress.enabled {
            out.push(ResourceObject::new(
                Self::route_key(&cr.key),
                json!({"to": {"kind": "Service", "name": name}, "port": {"targetPort": 8080}}),
            ));
        }
        for child in &mut out {
            child.labels.insert("app".into(), name.clone());
            child
                .labels
                .insert("app.kubernetes.io/managed-by".into(), OPERATOR_NAME.into());
            if let Some(level) = cr.labels.get(WATCH_LABEL) {
                child.labels.insert(WATCH_LABEL.into(), level.clone());
            }
            child.owner_refs = vec![cr.key.clone()];
        }
        out
    }

    fn route_key(cr: &ResourceKey) -> ResourceKey {
        ResourceKey::new("route.openshift.io/v1", "Route", &cr.namespace, &cr.name)
    }

    fn run(
        &self,
        store: &mut ClusterStore,
        key: &ResourceKey,
    ) -> Result<ReconcileOutcome, StoreError> {
        let Some(cr) = store.find(key).cloned() else {
            return Ok(ReconcileOutcome::done(0));
        };
        let spec: NginxSpec = match serde_json::from_value(cr.spec.clone()) {
            Ok(s) => s,
            Err(e) => return Ok(ReconcileOutcome::error(format!("invalid spec: {e}"), 0)),
        };
        let version = spec
            .version
            .clone()
            .unwrap_or_else(|| self.operator_version.clone());
        let mut actions = 0;
        for child in Self::children(&cr, &spec, &version) {
            actions += usize::from(store.apply(child)?.mutated());
        }
        let route = Self::route_key(key);
        if !spec.ingress.enabled && store.find(&route).is_some_and(|r| r.is_owned_by(key)) {
            actions += store.delete(&route)?.len();
        }

        let dep = store.get(&ResourceKey::new(
            DEPLOYMENT_API,
            "Deployment",
            &key.namespace,
            &key.name,
        ))?;
        let field = |f: &str| dep.status.get(f).and_then(Value::as_u64);
        let ready = field("readyReplicas").unwrap_or(0);
        let rolled_out = field("observedGeneration") == Some(dep.generation)
            && field("updatedReplicas") == Some(spec.replica_count)
            && field("replicas") == Some(spec.replica_count)
            && ready == spec.replica_count;
        let served = if rolled_out {
            Some(Value::String(version))
        } else {
            cr.status.get("servedVersion").cloned()
        };
        let mut status = json!({
            "readyReplicas": ready,
            "phase": if rolled_out { "Running" } else { "Pending" },
        });
        if let Some(v) = served {
            status["servedVersion"] = v;
        }
        if cr.status != status {
            store.update_status(key, status)?;
            actions += 1;
        }
        Ok(ReconcileOutcome::done(actions))
    }
}

impl Reconciler for NginxReconciler {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn watched(&self) -> WatchFilter {
        WatchFilter {
            api_version: Some(NGINX_API.into()),
            kind: Some(NGINX_KIND.into()),
        }
    }

    fn owned_kinds(&self) -> Vec<String> {
        vec!["Deployment".into(), "Service".into(), "Route".into()]
    }

    fn reconcile(
        &mut self,
        store: &mut ClusterStore,
        key: &ResourceKey,
        _now: Timestamp,
    ) -> ReconcileOutcome {
        self.run(store, key)
            .unwrap_or_else(|e| ReconcileOutcome::error(e.to_string(), 0))
    }
}

/// The operator's installation bundle: the `Nginx` CRD, RBAC objects, the
/// operator Deployment (labelled for lite reporting, annotated with the
/// version) and its metrics Service. Byte-identical for equal versions.
pub fn build_operator_bundle(operator_version: &str) -> Vec<u8> {
    let v = operator_version;
    let ns = OPERATOR_NAMESPACE;
    let docs = vec![
        json!({
            "apiVersion": "apiextensions.k8s.io/v1",
            "kind": "CustomResourceDefinition",
            "metadata": {"name": format!("{NGINX_PLURAL}.{NGINX_GROUP}")},
            "spec": {
                "group": NGINX_GROUP,
                "names": {"kind": NGINX_KIND, "listKind": "NginxList", "plural": NGINX_PLURAL, "singular": "nginx"},
                "scope": "Namespaced",
                "versions": [{"name": NGINX_VERSION, "served": true, "storage": true}],
            },
        }),
        json!({
            "apiVersion": "v1",
            "kind": "ServiceAccount",
            "metadata": {"name": OPERATOR_NAME, "namespace": ns},
        }),
        json!({
            "apiVersion": "rbac.authorization.k8s.io/v1",
            "kind": "Role",
            "metadata": {"name": OPERATOR_NAME, "namespace": ns},
            "rules": [
                {"apiGroups": [""], "resources": ["pods", "services", "configmaps"], "verbs": ["*"]},
                {"apiGroups": ["apps"], "resources": ["deployments"], "verbs": ["*"]},
                {"apiGroups": ["route.openshift.io"], "resources": ["routes"], "verbs": ["*"]},
                {"apiGroups": [NGINX_GROUP], "resources": [NGINX_PLURAL, format!("{NGINX_PLURAL}/status")], "verbs": ["*"]},
            ],
        }),
        json!({
            "apiVersion": "rbac.authorization.k8s.io/v1",
            "kind": "RoleBinding",
            "metadata": {"name": OPERATOR_NAME, "namespace": ns},
            "roleRef": {"apiGroup": "rbac.authorization.k8s.io", "kind": "Role", "name": OPERATOR_NAME},
            "subjects": [{"kind": "ServiceAccount", "name": OPERATOR_NAME, "namespace": ns}],
        }),
        json!({
            "apiVersion": DEPLOYMENT_API,
            "kind": "Deployment",
            "metadata": {
                "name": OPERATOR_NAME,
                "namespace": ns,
                "labels": {"app": OPERATOR_NAME, WATCH_LABEL: "lite"},
                "annotations": {VERSION_ANNOTATION: v},
            },
            "spec": {
                "replicas": 1,
                "selector": {"matchLabels": {"app": OPERATOR_NAME}},
                "template": {
                    "metadata": {"labels": {"app": OPERATOR_NAME}, "annotations": {VERSION_ANNOTATION: v}},
                    "spec": {
                        "serviceAccountName": OPERATOR_NAME,
                        "containers": [{
                            "name": OPERATOR_NAME,
                            "image": format!("nginx-operator:{v}"),
                            "env": [{"name": "WATCH_NAMESPACE", "value": ""}],
                        }],
                    },
                },
            },
        }),
        json!({
            "apiVersion": "v1",
            "kind": "Service",
            "metadata": {"name": "nginx-operator-metrics", "namespace": ns, "labels": {"app": OPERATOR_NAME}},
            "spec": {
                "selector": {"app": OPERATOR_NAME},
                "ports": [
                    {"name": "http-metrics", "port": 8383, "targetPort": 8383},
                    {"name": "cr-metrics", "port": 8686, "targetPort": 8686},
                ],
            },
        }),
    ];
    Bundle::from_documents(docs)
        .expect("operator bundle documents are well formed")
        .to_yaml()
        .into_bytes()
}
