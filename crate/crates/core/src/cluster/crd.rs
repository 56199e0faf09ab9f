use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::object::ResourceObject;

pub const CRD_KIND: &str = "CustomResourceDefinition";

/// Kinds every store accepts without registration, paired with their plural
/// and the `apiVersion` the API facade uses for them.
pub const BUILTIN_KINDS: &[(&str, &str, &str)] = &[
    ("Deployment", "deployments", "apps/v1"),
    ("Service", "services", "v1"),
    ("Route", "routes", "route.openshift.io/v1"),
    ("Pod", "pods", "v1"),
    ("ConfigMap", "configmaps", "v1"),
    ("Secret", "secrets", "v1"),
    ("ServiceAccount", "serviceaccounts", "v1"),
    ("Role", "roles", "rbac.authorization.k8s.io/v1"),
    (
        "RoleBinding",
        "rolebindings",
        "rbac.authorization.k8s.io/v1",
    ),
    (
        CRD_KIND,
        "customresourcedefinitions",
        "apiextensions.k8s.io/v1",
    ),
];

pub fn is_builtin(kind: &str) -> bool {
    BUILTIN_KINDS.iter().any(|(k, _, _)| *k == kind)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrdDefinition {
    pub group: String,
    pub version: String,
    pub kind: String,
    pub plural: String,
}

impl CrdDefinition {
    pub fn new(group: &str, version: &str, kind: &str, plural: &str) -> Self {
        CrdDefinition {
            group: group.into(),
            version: version.into(),
            kind: kind.into(),
            plural: plural.to_ascii_lowercase(),
        }
    }

    pub fn api_version(&self) -> String {
        format!("{}/{}", self.group, self.version)
    }

    pub fn accepts(&self, api_version: &str, kind: &str) -> bool {
        self.kind == kind && self.api_version() == api_version
    }

    /// Read a definition out of a `CustomResourceDefinition` object's spec.
    /// Accepts both `spec.version` and `spec.versions[0].name`.
    pub fn from_object(obj: &ResourceObject) -> Option<Self> {
        let spec = &obj.spec;
        let group = spec.get("group")?.as_str()?;
        let names = spec.get("names")?;
        let kind = names.get("kind")?.as_str()?;
        let plural = names.get("plural")?.as_str()?;
        let version = spec
            .get("version")
            .and_then(Value::as_str)
            .or_else(|| spec.get("versions")?.get(0)?.get("name")?.as_str())?;
        if [group, kind, plural, version].iter().any(|s| s.is_empty()) {
            return None;
        }
        Some(CrdDefinition::new(group, version, kind, plural))
    }
}
