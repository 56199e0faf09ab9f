use std::sync::Arc;

use crate::control_plane::{ApiError, ControlPlane, ReportBatch, SubscriptionHandout, TagSet};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("control plane unreachable: {0}")]
    Unreachable(String),
    #[error("control plane returned {status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
}

impl ClientError {
    pub fn is_unauthorized(&self) -> bool {
        matches!(self, ClientError::Api { status: 401, .. })
    }
}

impl From<ApiError> for ClientError {
    fn from(e: ApiError) -> Self {
        ClientError::Api {
            status: e.http_status(),
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

/// The agent's view of the control plane. Implementations carry the org key.
pub trait ControlPlaneClient: Send + Sync {
    fn register(&self, cluster_id: &str, tags: &TagSet) -> Result<(), ClientError>;
    fn poll(
        &self,
        cluster_id: &str,
        tags: &TagSet,
    ) -> Result<Vec<SubscriptionHandout>, ClientError>;
    /// `artifact_url` as handed out, i.e. `/api/v1/artifacts/{uid}`.
    fn fetch(&self, artifact_url: &str) -> Result<Vec<u8>, ClientError>;
    fn send_reports(&self, batch: &ReportBatch) -> Result<usize, ClientError>;
}

/// Direct calls into a shared [`ControlPlane`].
#[derive(Clone)]
pub struct InProcessClient {
    plane: Arc<ControlPlane>,
    org_key: String,
}

impl InProcessClient {
    pub fn new(plane: Arc<ControlPlane>, org_key: impl Into<String>) -> Self {
        InProcessClient {
            plane,
            org_key: org_key.into(),
        }
    }
}

pub fn uid_from_artifact_url(url: &str) -> &str {
    url.trim_end_matches('/').rsplit('/').next().unwrap_or("")
}

impl ControlPlaneClient for InProcessClient {
    fn register(&self, cluster_id: &str, tags: &TagSet) -> Result<(), ClientError> {
        self.plane
            .register_cluster(&self.org_key, cluster_id, tags.clone())?;
        Ok(())
    }

    fn poll(
        &self,
        cluster_id: &str,
        tags: &TagSet,
    ) -> Result<Vec<SubscriptionHandout>, ClientError> {
        if !self.plane.credentials().org_key_matches(&self.org_key) {
            return Err(ApiError::Unauthorized.into());
        }
        Ok(self.plane.poll_subscriptions(cluster_id, tags)?)
    }

    fn fetch(&self, artifact_url: &str) -> Result<Vec<u8>, ClientError> {
        Ok(self
            .plane
            .fetch_artifact(uid_from_artifact_url(artifact_url), &self.org_key)?)
    }

    fn send_reports(&self, batch: &ReportBatch) -> Result<usize, ClientError> {
        Ok(self.plane.ingest_batch(batch.clone(), &self.org_key)?)
    }
}

/// Wraps a client with injectable outages.
pub struct FaultyClient<'a> {
    pub inner: &'a dyn ControlPlaneClient,
    /// Every call fails.
    pub offline: bool,
    /// Artifact fetches fail.
    pub artifacts_down: bool,
}

impl<'a> FaultyClient<'a> {
    pub fn new(inner: &'a dyn ControlPlaneClient) -> Self {
        FaultyClient {
            inner,
            offline: false,
            artifacts_down: false,
        }
    }

    fn gate(&self) -> Result<(), ClientError> {
        if self.offline {
            Err(ClientError::Unreachable("injected outage".into()))
        } else {
            Ok(())
        }
    }
}

impl ControlPlaneClient for FaultyClient<'_> {
    fn register(&self, cluster_id: &str, tags: &TagSet) -> Result<(), ClientError> {
        self.gate()?;
        self.inner.register(cluster_id, tags)
    }

    fn poll(
        &self,
        cluster_id: &str,
        tags: &TagSet,
    ) -> Result<Vec<SubscriptionHandout>, ClientError> {
        self.gate()?;
        self.inner.poll(cluster_id, tags)
    }

    fn fetch(&self, artifact_url: &str) -> Result<Vec<u8>, ClientError> {
        self.gate()?;
        if self.artifacts_down {
            return Err(ClientError::Unreachable(format!(
                "artifact store unreachable for {artifact_url}"
            )));
        }
        self.inner.fetch(artifact_url)
    }

    fn send_reports(&self, batch: &ReportBatch) -> Result<usize, ClientError> {
        self.gate()?;
        self.inner.send_reports(batch)
    }
}
