//! JSON-over-HTTP routing for [`ControlPlane`], independent of any transport.
//!
//! Admin routes need `x-api-key` and `x-user-id`; agent routes (register,
//! poll, artifact fetch, reports) need `razeedash-org-key`. Version upload
//! needs all three.

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::*;
use crate::http::{HttpRequest, HttpResponse};

pub const ORG_KEY_HEADER: &str = "razeedash-org-key";
pub const RESOURCE_NAME_HEADER: &str = "resource-name";
pub const ADMIN_API_KEY_HEADER: &str = "x-api-key";
pub const ADMIN_USER_HEADER: &str = "x-user-id";

#[derive(Deserialize)]
struct NewChannel {
    name: String,
}

#[derive(Deserialize)]
struct NewSubscription {
    name: String,
    channel: String,
    version: String,
    tags: TagSet,
}

#[derive(Deserialize)]
struct SetVersion {
    version: String,
}

#[derive(Deserialize)]
struct Registration {
    cluster_id: String,
    #[serde(default)]
    tags: TagSet,
}

#[derive(Deserialize)]
struct NewRule {
    name: String,
    condition: AlertCondition,
    #[serde(default)]
    scope: Option<AlertScope>,
}

/// Route one request.
pub fn handle(cp: &ControlPlane, req: &HttpRequest) -> HttpResponse {
    match route(cp, req) {
        Ok(resp) => resp,
        Err(e) => e.to_response(),
    }
}

fn success(noun: &str, value: impl serde::Serialize) -> HttpResponse {
    let value = serde_json::to_value(value).expect("response types serialize");
    HttpResponse::json(200, &json!({"status": "success", noun: value}))
}

fn created(noun: &str, value: impl serde::Serialize) -> HttpResponse {
    let mut r = success(noun, value);
    r.status = 201;
    r
}

fn body<T: DeserializeOwned>(req: &HttpRequest) -> Result<T, ApiError> {
    serde_json::from_slice(&req.body)
        .map_err(|e| ApiError::BadRequest(format!("invalid JSON body: {e}")))
}

fn require_admin(cp: &ControlPlane, req: &HttpRequest) -> Result<(), ApiError> {
    let key = req.header(ADMIN_API_KEY_HEADER).unwrap_or("");
    let user = req.header(ADMIN_USER_HEADER).unwrap_or("");
    if cp.credentials().admin_matches(key, user) {
        Ok(())
    } else {
        Err(ApiError::Unauthorized)
    }
}

fn org_key(req: &HttpRequest) -> &str {
    req.header(ORG_KEY_HEADER).unwrap_or("")
}

fn parse_tags(raw: &str) -> TagSet {
    raw.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// `k=v,k2=v2`
fn parse_labels(raw: &str) -> Result<Vec<(String, String)>, ApiError> {
    raw.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| ApiError::BadRequest(format!("label filter {p:?} is not k=v")))
        })
        .collect()
}

fn route(cp: &ControlPlane, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
    let segs = req.segments();
    let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
    let method = req.method.to_ascii_uppercase();
    let rest = match segs.as_slice() {
        ["api", "v1", rest @ ..] => rest,
        _ => return Err(ApiError::NotFound(format!("route {}", req.path))),
    };

    match (method.as_str(), rest) {
        ("POST", ["channels"]) => {
            require_admin(cp, req)?;
            let b: NewChannel = body(req)?;
            Ok(created("channel", cp.create_channel(&b.name)?))
        }
        ("GET", ["channels"]) => {
            require_admin(cp, req)?;
            Ok(success("channels", cp.list_channels()))
        }
        ("GET", ["channels", name]) => {
            require_admin(cp, req)?;
            Ok(success("channel", cp.get_channel(name)?))
        }
        ("DELETE", ["channels", name]) => {
            require_admin(cp, req)?;
            cp.delete_channel(name)?;
            Ok(success("deleted", name))
        }
        ("POST", ["channels", channel, "version"]) => {
            let creds = Credentials::new(
                org_key(req),
                req.header(ADMIN_API_KEY_HEADER).unwrap_or(""),
                req.header(ADMIN_USER_HEADER).unwrap_or(""),
            );
            let version = req.header(RESOURCE_NAME_HEADER).ok_or_else(|| {
                ApiError::BadRequest(format!("missing {RESOURCE_NAME_HEADER} header"))
            })?;
            let receipt = cp.upload_version(channel, version, &req.body, &creds)?;
            Ok(HttpResponse::json(200, &receipt))
        }

        ("POST", ["subscriptions"]) => {
            require_admin(cp, req)?;
            let b: NewSubscription = body(req)?;
            Ok(created(
                "subscription",
                cp.create_subscription(&b.name, &b.channel, &b.version, b.tags)?,
            ))
        }
        ("GET", ["subscriptions"]) => {
            require_admin(cp, req)?;
            Ok(success("subscriptions", cp.list_subscriptions()))
        }
        ("GET", ["subscriptions", id]) => {
            require_admin(cp, req)?;
            Ok(success("subscription", cp.get_subscription(id)?))
        }
        ("PATCH", ["subscriptions", id, "version"]) => {
            require_admin(cp, req)?;
            let b: SetVersion = body(req)?;
            Ok(success(
                "subscription",
                cp.set_subscription_version(id, &b.version)?,
            ))
        }
        ("DELETE", ["subscriptions", id]) => {
            require_admin(cp, req)?;
            Ok(success("subscription", cp.delete_subscription(id)?))
        }

        ("POST", ["clusters", "register"]) => {
            let b: Registration = body(req)?;
            Ok(success(
                "cluster",
                cp.register_cluster(org_key(req), &b.cluster_id, b.tags)?,
            ))
        }
        ("GET", ["clusters"]) => {
            require_admin(cp, req)?;
            Ok(success("clusters", cp.query_inventory()))
        }
        ("GET", ["clusters", id, "subscriptions"]) => {
            if !cp.credentials().org_key_matches(org_key(req)) {
                return Err(ApiError::Unauthorized);
            }
            let tags = match req.query.get("tags") {
                Some(raw) => parse_tags(raw),
                None => cp.cluster(id)?.tags,
            };
            Ok(success("subscriptions", cp.poll_subscriptions(id, &tags)?))
        }
        ("POST", ["clusters", id, "reports"]) => {
            let mut batch: ReportBatch = body(req)?;
            if batch.cluster_id.is_empty() {
                batch.cluster_id = id.to_string();
            }
            if batch.cluster_id != *id {
                return Err(ApiError::MalformedReport(format!(
                    "batch for {} posted to {id}",
                    batch.cluster_id
                )));
            }
            Ok(success("accepted", cp.ingest_batch(batch, org_key(req))?))
        }
        ("GET", ["clusters", id, "resources"]) => {
            require_admin(cp, req)?;
            let query = ResourceQuery {
                kind: req.query.get("kind").filter(|s| !s.is_empty()).cloned(),
                namespace: req
                    .query
                    .get("namespace")
                    .filter(|s| !s.is_empty())
                    .cloned(),
                labels: parse_labels(req.query.get("label").map(String::as_str).unwrap_or(""))?,
            };
            Ok(success("resources", cp.query_resources(id, &query)?))
        }
        ("GET", ["clusters", id, "resources", "history"]) => {
            require_admin(cp, req)?;
            let q = |k: &str| {
                req.query
                    .get(k)
                    .cloned()
                    .ok_or_else(|| ApiError::BadRequest(format!("missing query parameter {k}")))
            };
            let key = ResourceKey::new(q("apiVersion")?, q("kind")?, q("namespace")?, q("name")?);
            Ok(success("history", cp.resource_history(id, &key)?))
        }

        ("GET", ["artifacts", uid]) => {
            let bytes = cp.fetch_artifact(uid, org_key(req))?;
            Ok(HttpResponse::bytes(200, "text/yaml", bytes))
        }

        ("POST", ["alerts"]) => {
            require_admin(cp, req)?;
            let b: NewRule = body(req)?;
            Ok(created(
                "rule",
                cp.create_alert_rule(&b.name, b.condition, b.scope)?,
            ))
        }
        ("GET", ["alerts"]) => {
            require_admin(cp, req)?;
            Ok(success("rules", cp.list_alert_rules()))
        }
        ("GET", ["alerts", "firings"]) => {
            require_admin(cp, req)?;
            let now = match req.query.get("now") {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| ApiError::BadRequest(format!("now={raw:?} is not an integer")))?,
                None => cp.now(),
            };
            Ok(success("firings", cp.evaluate_alerts(now)))
        }
        ("DELETE", ["alerts", id]) => {
            require_admin(cp, req)?;
            cp.delete_alert_rule(id)?;
            Ok(success("deleted", Value::String(id.to_string())))
        }

        _ => Err(ApiError::NotFound(format!(
            "route {} {}",
            req.method, req.path
        ))),
    }
}
