//! Generic resource objects and their Kubernetes-style document form.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::hash::value_digest;

pub type Labels = BTreeMap<String, String>;

/// Identity of an object within one cluster store.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceKey {
    pub api_version: String,
    pub kind: String,
    pub namespace: String,
    pub name: String,
}

impl ResourceKey {
    pub fn new(
        api_version: impl Into<String>,
        kind: impl Into<String>,
        namespace: impl Into<String>,
        name: impl Into<String>,
    ) -> Self {
        ResourceKey {
            api_version: api_version.into(),
            kind: kind.into(),
            namespace: namespace.into(),
            name: name.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !(self.api_version.is_empty()
            || self.kind.is_empty()
            || self.namespace.is_empty()
            || self.name.is_empty())
    }

    /// API group, empty for the core group (`v1`).
    pub fn group(&self) -> &str {
        self.api_version
            .rsplit_once('/')
            .map(|(g, _)| g)
            .unwrap_or("")
    }
}

impl fmt::Display for ResourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} {}/{}",
            self.api_version, self.kind, self.namespace, self.name
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceObject {
    pub key: ResourceKey,
    pub labels: Labels,
    pub annotations: Labels,
    pub spec: Value,
    pub status: Value,
    pub generation: u64,
    pub resource_version: u64,
    pub owner_refs: Vec<ResourceKey>,
    pub deleting: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("malformed resource document: {0}")]
    Malformed(String),
}

impl ResourceObject {
    pub fn new(key: ResourceKey, spec: Value) -> Self {
        ResourceObject {
            key,
            labels: Labels::new(),
            annotations: Labels::new(),
            spec,
            status: Value::Null,
            generation: 0,
            resource_version: 0,
            owner_refs: Vec::new(),
            deleting: false,
        }
    }

    pub fn with_label(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.labels.insert(k.into(), v.into());
        self
    }

    pub fn with_annotation(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.annotations.insert(k.into(), v.into());
        self
    }

    pub fn with_owner(mut self, owner: ResourceKey) -> Self {
        self.owner_refs.push(owner);
        self
    }

    pub fn spec_digest(&self) -> String {
        value_digest(&self.spec)
    }

    pub fn is_owned_by(&self, owner: &ResourceKey) -> bool {
        self.owner_refs.iter().any(|o| o == owner)
    }

    /// Parse a Kubernetes-style document. `metadata.namespace` defaults to
    /// `default_namespace`. Documents without a `spec` field (ConfigMap
    /// `data`, Role `rules`, ...) have their extra top-level fields folded
    /// into `spec`.
    pub fn from_document(doc: &Value, default_namespace: &str) -> Result<Self, DocumentError> {
        let parsed: Document = serde_json::from_value(doc.clone())
            .map_err(|e| DocumentError::Malformed(e.to_string()))?;
        let namespace = parsed
            .metadata
            .namespace
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| default_namespace.to_string());
        let key = ResourceKey::new(
            parsed.api_version,
            parsed.kind,
            namespace,
            parsed.metadata.name,
        );
        if !key.is_valid() {
            return Err(DocumentError::Malformed(format!("incomplete key {key}")));
        }
        let spec = match parsed.spec {
            Some(spec) => spec,
            None if parsed.extra.is_empty() => Value::Null,
            None => Value::Object(parsed.extra.into_iter().collect::<Map<_, _>>()),
        };
        let owner_refs = parsed
            .metadata
            .owner_references
            .into_iter()
            .map(|o| {
                let ns = o.namespace.unwrap_or_else(|| key.namespace.clone());
                ResourceKey::new(o.api_version, o.kind, ns, o.name)
            })
            .collect();
        Ok(ResourceObject {
            labels: parsed.metadata.labels,
            annotations: parsed.metadata.annotations,
            spec,
            status: parsed.status.unwrap_or(Value::Null),
            generation: parsed.metadata.generation.unwrap_or(0),
            resource_version: parsed.metadata.resource_version.unwrap_or(0),
            owner_refs,
            deleting: parsed.metadata.deleting,
            key,
        })
    }

    pub fn to_document(&self) -> Value {
        let doc = Document {
            api_version: self.key.api_version.clone(),
            kind: self.key.kind.clone(),
            metadata: Metadata {
                name: self.key.name.clone(),
                namespace: Some(self.key.namespace.clone()),
                labels: self.labels.clone(),
                annotations: self.annotations.clone(),
                generation: Some(self.generation),
                resource_version: Some(self.resource_version),
                owner_references: self
                    .owner_refs
                    .iter()
                    .map(|o| OwnerReference {
                        api_version: o.api_version.clone(),
                        kind: o.kind.clone(),
                        name: o.name.clone(),
                        namespace: Some(o.namespace.clone()),
                    })
                    .collect(),
                deleting: self.deleting,
            },
            spec: Some(self.spec.clone()),
            status: Some(self.status.clone()),
            extra: BTreeMap::new(),
        };
        serde_json::to_value(doc).expect("document serializes")
    }

    /// `status.phase`, if present.
    pub fn phase(&self) -> Option<&str> {
        self.status.get("phase").and_then(Value::as_str)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Document {
    api_version: String,
    kind: String,
    metadata: Metadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    status: Option<Value>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Metadata {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    namespace: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: Labels,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    annotations: Labels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generation: Option<u64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_u64_string"
    )]
    resource_version: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    owner_references: Vec<OwnerReference>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    deleting: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct OwnerReference {
    api_version: String,
    kind: String,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    namespace: Option<String>,
}

/// `resourceVersion` is a string on the wire, as in Kubernetes.
mod opt_u64_string {
    use serde::{Deserialize, Deserializer, Serializer};
    use serde_json::Value;

    pub fn serialize<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => s.serialize_str(&n.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        match Option::<Value>::deserialize(d)? {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_u64()),
            Some(Value::String(s)) => s.parse().map(Some).map_err(serde::de::Error::custom),
            Some(other) => Err(serde::de::Error::custom(format!(
                "bad resourceVersion {other}"
            ))),
        }
    }
}
