//! HTTP transport: a blocking tiny_http listener that dispatches to any
//! [`HttpRequest`] handler, and a ureq-backed [`ControlPlaneClient`].

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::agent::{ClientError, ControlPlaneClient};
use crate::cluster::{ClusterApi, ClusterStore};
use crate::control_plane::{
    handle, ControlPlane, ReportBatch, SubscriptionHandout, TagSet, ADMIN_API_KEY_HEADER,
    ADMIN_USER_HEADER, ORG_KEY_HEADER,
};
use crate::http::{percent_encode, HttpRequest, HttpResponse};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: String, message: String },
}

pub type Handler = Arc<dyn Fn(&HttpRequest) -> HttpResponse + Send + Sync>;

pub fn control_plane_handler(plane: Arc<ControlPlane>) -> Handler {
    Arc::new(move |req| handle(&plane, req))
}

pub fn cluster_api_handler(api: ClusterApi, store: Arc<Mutex<ClusterStore>>) -> Handler {
    Arc::new(move |req| {
        let mut store = store.lock().unwrap_or_else(|e| e.into_inner());
        api.handle(&mut store, req)
    })
}

const CORS_HEADERS: [(&str, &str); 3] = [
    ("Access-Control-Allow-Origin", "*"),
    (
        "Access-Control-Allow-Methods",
        "GET, POST, PATCH, DELETE, OPTIONS",
    ),
    (
        "Access-Control-Allow-Headers",
        "content-type, authorization, razeedash-org-key, resource-name, x-api-key, x-user-id",
    ),
];

pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    handler: Handler,
    addr: SocketAddr,
}

impl HttpServer {
    /// `addr` may use port 0 to pick a free port.
    pub fn bind(addr: &str, handler: Handler) -> Result<Self, NetError> {
        let server = tiny_http::Server::http(addr).map_err(|e| NetError::Bind {
            addr: addr.to_string(),
            message: e.to_string(),
        })?;
        let addr = server.server_addr().to_ip().ok_or_else(|| NetError::Bind {
            addr: addr.to_string(),
            message: "not an IP listener".into(),
        })?;
        Ok(HttpServer {
            server: Arc::new(server),
            handler,
            addr,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serve until `stop` is set. Checked at least every 100 ms.
    pub fn run(&self, stop: &AtomicBool) {
        while !stop.load(Ordering::Relaxed) {
            match self.server.recv_timeout(Duration::from_millis(100)) {
                Ok(Some(req)) => self.respond(req),
                Ok(None) => {}
                Err(e) => {
                    tracing::warn!(error = %e, "accept failed");
                }
            }
        }
    }

    /// Serve on a background thread until the handle is stopped or dropped.
    pub fn spawn(self) -> ServerHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let addr = self.addr;
        let thread = std::thread::spawn(move || self.run(&flag));
        ServerHandle {
            stop,
            thread: Some(thread),
            addr,
        }
    }

    fn respond(&self, mut raw: tiny_http::Request) {
        let mut req = HttpRequest::new(raw.method().as_str(), raw.url());
        for h in raw.headers() {
            req.set_header(h.field.as_str().as_str(), h.value.as_str());
        }
        let resp = match raw.as_reader().read_to_end(&mut req.body) {
            Ok(_) if req.method == "OPTIONS" => HttpResponse::bytes(204, "text/plain", Vec::new()),
            Ok(_) => (self.handler)(&req),
            Err(e) => HttpResponse::json(
                400,
                &serde_json::json!({"status": "error", "code": "BadRequest", "message": e.to_string()}),
            ),
        };
        tracing::debug!(method = %req.method, path = %req.path, status = resp.status, "request");
        let mut out = tiny_http::Response::from_data(resp.body).with_status_code(resp.status);
        let headers =
            std::iter::once(("Content-Type", resp.content_type.as_str())).chain(CORS_HEADERS);
        for (k, v) in headers {
            if let Ok(h) = tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()) {
                out.add_header(h);
            }
        }
        if let Err(e) = raw.respond(out) {
            tracing::debug!(error = %e, "client went away");
        }
    }
}

pub struct ServerHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    addr: SocketAddr,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Blocking HTTP client. Carries whichever credentials are set; the agent
/// only needs the org key, admin commands need the API key and user id.
#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    base_url: String,
    org_key: Option<String>,
    api_key: Option<String>,
    user_id: Option<String>,
}

impl HttpClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpClient {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            org_key: None,
            api_key: None,
            user_id: None,
        }
    }

    pub fn with_org_key(mut self, key: impl Into<String>) -> Self {
        self.org_key = Some(key.into());
        self
    }

    pub fn with_admin(mut self, api_key: impl Into<String>, user_id: impl Into<String>) -> Self {
        self.api_key = Some(api_key.into());
        self.user_id = Some(user_id.into());
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Send `req` (path relative to the base URL) with the stored
    /// credentials added. Any HTTP status is returned as a response.
    pub fn send(&self, req: &HttpRequest) -> Result<HttpResponse, ClientError> {
        let mut target = format!("{}{}", self.base_url, req.path);
        if !req.query.is_empty() {
            let q: Vec<String> = req
                .query
                .iter()
                .map(|(k, v)| format!("{}={}", percent_encode(k), percent_encode(v)))
                .collect();
            target.push('?');
            target.push_str(&q.join("&"));
        }
        let mut builder = ureq::http::Request::builder()
            .method(req.method.as_str())
            .uri(&target);
        let creds = [
            (ORG_KEY_HEADER, &self.org_key),
            (ADMIN_API_KEY_HEADER, &self.api_key),
            (ADMIN_USER_HEADER, &self.user_id),
        ];
        for (name, value) in creds {
            if let Some(v) = value {
                builder = builder.header(name, v);
            }
        }
        for (k, v) in req.headers() {
            builder = builder.header(k, v);
        }
        if !req.body.is_empty() && req.header("content-type").is_none() {
            builder = builder.header("content-type", "application/json");
        }
        let request = builder
            .body(req.body.clone())
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let mut resp = self
            .agent
            .run(request)
            .map_err(|e| ClientError::Unreachable(format!("{target}: {e}")))?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_string();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| ClientError::Unreachable(format!("{target}: {e}")))?;
        Ok(HttpResponse {
            status,
            content_type,
            body,
        })
    }

    /// Like [`send`](Self::send), mapping non-2xx statuses to
    /// [`ClientError::Api`].
    pub fn call(&self, req: &HttpRequest) -> Result<HttpResponse, ClientError> {
        let resp = self.send(req)?;
        if resp.is_success() {
            return Ok(resp);
        }
        let body = resp.body_json().unwrap_or_default();
        let field = |k: &str| {
            body.get(k)
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string()
        };
        Err(ClientError::Api {
            status: resp.status,
            code: field("code"),
            message: field("message"),
        })
    }

    fn call_json(&self, req: &HttpRequest, field: &str) -> Result<serde_json::Value, ClientError> {
        let resp = self.call(req)?;
        let mut v = resp
            .body_json()
            .map_err(|e| ClientError::Unreachable(format!("malformed response: {e}")))?;
        Ok(v.get_mut(field)
            .map(serde_json::Value::take)
            .unwrap_or_default())
    }
}

fn malformed(e: serde_json::Error) -> ClientError {
    ClientError::Unreachable(format!("malformed response: {e}"))
}

impl ControlPlaneClient for HttpClient {
    fn register(&self, cluster_id: &str, tags: &TagSet) -> Result<(), ClientError> {
        let req = HttpRequest::post("/api/v1/clusters/register")
            .with_json(&serde_json::json!({"cluster_id": cluster_id, "tags": tags}));
        self.call(&req).map(|_| ())
    }

    fn poll(
        &self,
        cluster_id: &str,
        tags: &TagSet,
    ) -> Result<Vec<SubscriptionHandout>, ClientError> {
        let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
        let target = format!(
            "/api/v1/clusters/{}/subscriptions?tags={}",
            percent_encode(cluster_id),
            percent_encode(&tags.join(","))
        );
        let v = self.call_json(&HttpRequest::get(&target), "subscriptions")?;
        serde_json::from_value(v).map_err(malformed)
    }

    fn fetch(&self, artifact_url: &str) -> Result<Vec<u8>, ClientError> {
        Ok(self.call(&HttpRequest::get(artifact_url))?.body)
    }

    fn send_reports(&self, batch: &ReportBatch) -> Result<usize, ClientError> {
        let req = HttpRequest::post(&format!(
            "/api/v1/clusters/{}/reports",
            percent_encode(&batch.cluster_id)
        ))
        .with_json(batch);
        let v = self.call_json(&req, "accepted")?;
        serde_json::from_value(v).map_err(malformed)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid server config: {0}")]
    Invalid(String),
    #[error("cannot open store: {0}")]
    Store(String),
}

/// Control-plane server settings. JSON or YAML.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub org_key: String,
    pub api_key: String,
    pub user_id: String,
    /// Artifacts and catalog are persisted here; in memory when unset.
    #[serde(default)]
    pub store_dir: Option<std::path::PathBuf>,
}

fn default_listen() -> String {
    "127.0.0.1:8081".into()
}

impl ServerConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ServerConfigError> {
        let shown = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ServerConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        serde_yaml::from_str(&raw).map_err(|e| ServerConfigError::Parse {
            path: shown,
            message: e.to_string(),
        })
    }

    /// `RAZORCD_LISTEN`, `RAZORCD_STORE_DIR`, `RAZORCD_ORG_KEY`,
    /// `RAZORCD_API_KEY` and `RAZORCD_USER_ID` replace file values.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        let var = |k: &str| var(k).filter(|s| !s.is_empty());
        if let Some(v) = var("RAZORCD_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("RAZORCD_STORE_DIR") {
            self.store_dir = Some(v.into());
        }
        if let Some(v) = var("RAZORCD_ORG_KEY") {
            self.org_key = v;
        }
        if let Some(v) = var("RAZORCD_API_KEY") {
            self.api_key = v;
        }
        if let Some(v) = var("RAZORCD_USER_ID") {
            self.user_id = v;
        }
    }

    pub fn validate(&self) -> Result<(), ServerConfigError> {
        if self.org_key.is_empty() || self.api_key.is_empty() || self.user_id.is_empty() {
            return Err(ServerConfigError::Invalid(
                "org_key, api_key and user_id are required".into(),
            ));
        }
        if self.listen.parse::<SocketAddr>().is_err() {
            return Err(ServerConfigError::Invalid(format!(
                "listen {:?} is not host:port",
                self.listen
            )));
        }
        Ok(())
    }

    pub fn credentials(&self) -> crate::auth::Credentials {
        crate::auth::Credentials::new(&self.org_key, &self.api_key, &self.user_id)
    }

    pub fn build_plane(
        &self,
        clock: Arc<dyn crate::clock::Clock>,
    ) -> Result<ControlPlane, ServerConfigError> {
        self.validate()?;
        let store = |e: &dyn std::fmt::Display| ServerConfigError::Store(e.to_string());
        match &self.store_dir {
            None => Ok(ControlPlane::new(
                self.credentials(),
                Arc::new(crate::control_plane::MemoryArtifactStore::new()),
                clock,
            )),
            Some(dir) => {
                let artifacts =
                    crate::control_plane::FileArtifactStore::open(dir.join("artifacts"))
                        .map_err(|e| store(&e))?;
                ControlPlane::new(self.credentials(), Arc::new(artifacts), clock)
                    .with_catalog_file(dir.join("state.json"))
                    .map_err(|e| store(&e))
            }
        }
    }
}
