//! Multi-document manifest bundles.
//!
//! A bundle is a YAML stream of resource documents separated by `---`. Each
//! document must be a mapping with `apiVersion`, `kind` and `metadata.name`.
//! The content hash is taken over the canonical form (every document
//! re-serialized as sorted-key JSON, newline separated), so whitespace,
//! comments and key order do not change it.

use serde::Deserialize;
use serde_json::Value;

use crate::hash::{canonical_json, ContentHash};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("bundle is not valid UTF-8")]
    NotUtf8,
    #[error("document {index}: {message}")]
    Document { index: usize, message: String },
    #[error("bundle contains no documents")]
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    documents: Vec<Value>,
}

impl Bundle {
    pub fn parse(bytes: &[u8]) -> Result<Self, BundleError> {
        let text = std::str::from_utf8(bytes).map_err(|_| BundleError::NotUtf8)?;
        let mut documents = Vec::new();
        for (index, doc) in serde_yaml::Deserializer::from_str(text).enumerate() {
            let value = Value::deserialize(doc).map_err(|e| BundleError::Document {
                index,
                message: e.to_string(),
            })?;
            if value.is_null() {
                continue;
            }
            validate_document(&value)
                .map_err(|message| BundleError::Document { index, message })?;
            documents.push(value);
        }
        if documents.is_empty() {
            return Err(BundleError::Empty);
        }
        Ok(Bundle { documents })
    }

    pub fn from_documents(documents: Vec<Value>) -> Result<Self, BundleError> {
        if documents.is_empty() {
            return Err(BundleError::Empty);
        }
        for (index, doc) in documents.iter().enumerate() {
            validate_document(doc).map_err(|message| BundleError::Document { index, message })?;
        }
        Ok(Bundle { documents })
    }

    pub fn documents(&self) -> &[Value] {
        &self.documents
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.documents
            .iter()
            .map(canonical_json)
            .collect::<Vec<_>>()
            .join("\n")
            .into_bytes()
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&self.canonical_bytes())
    }

    /// Render as a YAML stream. Output is deterministic for a given bundle.
    pub fn to_yaml(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str("---\n");
            out.push_str(&serde_yaml::to_string(doc).expect("json value renders as yaml"));
        }
        out
    }
}

/// Parse and hash in one step.
pub fn content_hash_of(bytes: &[u8]) -> Result<ContentHash, BundleError> {
    Ok(Bundle::parse(bytes)?.content_hash())
}

fn validate_document(doc: &Value) -> Result<(), String> {
    let obj = doc.as_object().ok_or("document is not a mapping")?;
    for field in ["apiVersion", "kind"] {
        match obj.get(field) {
            Some(Value::String(s)) if !s.is_empty() => {}
            _ => return Err(format!("missing or empty `{field}`")),
        }
    }
    match obj.get("metadata").and_then(|m| m.get("name")) {
        Some(Value::String(s)) if !s.is_empty() => Ok(()),
        _ => Err("missing or empty `metadata.name`".into()),
    }
}
