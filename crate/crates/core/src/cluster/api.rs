//! HTTP-style facade over a [`ClusterStore`], mirroring Kubernetes resource
//! paths:
//!
//! ```text
//! /apis/{group}/{version}/namespaces/{ns}/{plural}[/{name}]
//! /api/{version}/namespaces/{ns}/{plural}[/{name}]
//! ```
//!
//! Plurals are matched case-insensitively, so `Nginxes` resolves to the
//! `nginxes` definition.

use serde_json::{json, Value};

use super::crd::BUILTIN_KINDS;
use super::object::{Labels, ResourceKey, ResourceObject};
use super::{ClusterStore, ListParams, StoreError};
use crate::auth::constant_time_eq;
use crate::http::{HttpRequest, HttpResponse};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClusterApiError {
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("no route for {0}")]
    NoRoute(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} already exists")]
    AlreadyExists(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("method {0} not allowed")]
    MethodNotAllowed(String),
}

impl ClusterApiError {
    fn status(&self) -> (u16, &'static str) {
        match self {
            ClusterApiError::Unauthorized => (401, "Unauthorized"),
            ClusterApiError::NoRoute(_) | ClusterApiError::NotFound(_) => (404, "NotFound"),
            ClusterApiError::AlreadyExists(_) => (409, "AlreadyExists"),
            ClusterApiError::BadRequest(_) => (400, "BadRequest"),
            ClusterApiError::MethodNotAllowed(_) => (405, "MethodNotAllowed"),
        }
    }

    fn into_response(self) -> HttpResponse {
        let (code, reason) = self.status();
        HttpResponse::json(
            code,
            &json!({"kind": "Status", "status": "Failure", "reason": reason, "message": self.to_string(), "code": code}),
        )
    }
}

impl From<StoreError> for ClusterApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(k) => ClusterApiError::NotFound(k.to_string()),
            other => ClusterApiError::BadRequest(other.to_string()),
        }
    }
}

struct Route {
    api_version: String,
    kind: String,
    namespace: String,
    name: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ClusterApi {
    bearer_token: String,
}

impl ClusterApi {
    pub fn new(bearer_token: impl Into<String>) -> Self {
        ClusterApi {
            bearer_token: bearer_token.into(),
        }
    }

    pub fn handle(&self, store: &mut ClusterStore, req: &HttpRequest) -> HttpResponse {
        match self.dispatch(store, req) {
            Ok(resp) => resp,
            Err(e) => e.into_response(),
        }
    }

    fn authorized(&self, req: &HttpRequest) -> bool {
        let Some(raw) = req.header("authorization") else {
            return false;
        };
        let token = raw.strip_prefix("Bearer ").unwrap_or(raw).trim();
        !self.bearer_token.is_empty()
            && constant_time_eq(token.as_bytes(), self.bearer_token.as_bytes())
    }

    fn dispatch(
        &self,
        store: &mut ClusterStore,
        req: &HttpRequest,
    ) -> Result<HttpResponse, ClusterApiError> {
        if !self.authorized(req) {
            return Err(ClusterApiError::Unauthorized);
        }
        let route = resolve(store, req)?;
        match (req.method.as_str(), &route.name) {
            ("GET", None) => {
                let mut params =
                    ListParams::kind(route.kind.clone()).in_namespace(route.namespace.clone());
                params.api_version = Some(route.api_version.clone());
                if let Some(sel) = req.query.get("labelSelector") {
                    params.selector = parse_selector(sel)?;
                }
                let items: Vec<Value> = store
                    .list(&params)
                    .into_iter()
                    .map(ResourceObject::to_document)
                    .collect();
                Ok(HttpResponse::json(
                    200,
                    &json!({"kind": format!("{}List", route.kind), "items": items}),
                ))
            }
            ("GET", Some(name)) => {
                let key =
                    ResourceKey::new(route.api_version, route.kind, route.namespace, name.clone());
                Ok(HttpResponse::json(200, &store.get(&key)?.to_document()))
            }
            ("POST", None) => {
                let obj = parse_body(req, &route, None)?;
                if store.contains(&obj.key) {
                    return Err(ClusterApiError::AlreadyExists(obj.key.to_string()));
                }
                let key = obj.key.clone();
                store.apply(obj)?;
                Ok(HttpResponse::json(201, &store.get(&key)?.to_document()))
            }
            ("PUT", Some(name)) => {
                let obj = parse_body(req, &route, Some(name))?;
                let key = obj.key.clone();
                let res = store.apply(obj)?;
                let code = if res.outcome == super::ApplyOutcome::Created {
                    201
                } else {
                    200
                };
                Ok(HttpResponse::json(code, &store.get(&key)?.to_document()))
            }
            ("DELETE", Some(name)) => {
                let key =
                    ResourceKey::new(route.api_version, route.kind, route.namespace, name.clone());
                let removed = store.delete(&key)?;
                let deleted: Vec<String> = removed.iter().map(ToString::to_string).collect();
                Ok(HttpResponse::json(
                    200,
                    &json!({"kind": "Status", "status": "Success", "details": {"name": name, "deleted": deleted}}),
                ))
            }
            (m, _) => Err(ClusterApiError::MethodNotAllowed(m.to_string())),
        }
    }
}

fn resolve(store: &ClusterStore, req: &HttpRequest) -> Result<Route, ClusterApiError> {
    let segs: Vec<String> = req
        .segments()
        .into_iter()
        .map(|s| s.trim().to_string())
        .collect();
    let s: Vec<&str> = segs.iter().map(String::as_str).collect();
    let (group, version, rest) = match s.as_slice() {
        ["apis", group, version, rest @ ..] => (*group, *version, rest),
        ["api", version, rest @ ..] => ("", *version, rest),
        _ => return Err(ClusterApiError::NoRoute(req.path.clone())),
    };
    let (namespace, plural, name) = match rest {
        ["namespaces", ns, plural] => (*ns, *plural, None),
        ["namespaces", ns, plural, name] => (*ns, *plural, Some(name.to_string())),
        _ => return Err(ClusterApiError::NoRoute(req.path.clone())),
    };
    let plural = plural.to_ascii_lowercase();
    let api_version = if group.is_empty() {
        version.to_string()
    } else {
        format!("{group}/{version}")
    };
    let kind = if let Some((kind, _, _)) = BUILTIN_KINDS.iter().find(|(_, p, _)| *p == plural) {
        kind.to_string()
    } else {
        match store.crd_for_plural(&plural) {
            Some(def) if def.group == group && def.version == version => def.kind.clone(),
            _ => return Err(ClusterApiError::NoRoute(req.path.clone())),
        }
    };
    Ok(Route {
        api_version,
        kind,
        namespace: namespace.to_string(),
        name,
    })
}

fn parse_body(
    req: &HttpRequest,
    route: &Route,
    name: Option<&String>,
) -> Result<ResourceObject, ClusterApiError> {
    let doc: Value = serde_json::from_slice(&req.body)
        .map_err(|e| ClusterApiError::BadRequest(format!("body is not JSON: {e}")))?;
    let obj = ResourceObject::from_document(&doc, &route.namespace)
        .map_err(|e| ClusterApiError::BadRequest(e.to_string()))?;
    if obj.key.kind != route.kind || obj.key.api_version != route.api_version {
        return Err(ClusterApiError::BadRequest(format!(
            "body is {} {}, path expects {} {}",
            obj.key.api_version, obj.key.kind, route.api_version, route.kind
        )));
    }
    if obj.key.namespace != route.namespace {
        return Err(ClusterApiError::BadRequest(
            "namespace does not match path".into(),
        ));
    }
    if let Some(n) = name {
        if &obj.key.name != n {
            return Err(ClusterApiError::BadRequest(
                "name does not match path".into(),
            ));
        }
    }
    Ok(obj)
}

fn parse_selector(sel: &str) -> Result<Labels, ClusterApiError> {
    sel.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| ClusterApiError::BadRequest(format!("bad selector term {p}")))
        })
        .collect()
}
