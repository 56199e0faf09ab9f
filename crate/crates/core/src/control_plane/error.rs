use serde_json::json;

use crate::http::HttpResponse;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ApiError {
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("channel {0} already exists")]
    DuplicateChannel(String),
    #[error("subscription {0} already exists")]
    DuplicateSubscription(String),
    #[error("channel {0} not found")]
    ChannelNotFound(String),
    #[error("channel {channel} already has version {version}")]
    VersionExists { channel: String, version: String },
    #[error("version {version} not found in channel {channel}")]
    VersionNotFound { channel: String, version: String },
    #[error("subscription {0} not found")]
    SubscriptionNotFound(String),
    #[error("channel {0} has live subscriptions")]
    ChannelInUse(String),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("subscription tags must not be empty")]
    EmptyTags,
    #[error("invalid alert rule: {0}")]
    InvalidRule(String),
    #[error("unknown cluster {0}")]
    UnknownCluster(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("unauthorized")]
    Unauthorized,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl ApiError {
    /// Stable machine-readable code used in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::InvalidName(_) => "InvalidName",
            ApiError::DuplicateChannel(_) => "DuplicateChannel",
            ApiError::DuplicateSubscription(_) => "DuplicateSubscription",
            ApiError::ChannelNotFound(_) => "ChannelNotFound",
            ApiError::VersionExists { .. } => "VersionExists",
            ApiError::VersionNotFound { .. } => "VersionNotFound",
            ApiError::SubscriptionNotFound(_) => "SubscriptionNotFound",
            ApiError::ChannelInUse(_) => "ChannelInUse",
            ApiError::MalformedBundle(_) => "MalformedBundle",
            ApiError::MalformedReport(_) => "MalformedReport",
            ApiError::EmptyTags => "EmptyTags",
            ApiError::InvalidRule(_) => "InvalidRule",
            ApiError::UnknownCluster(_) => "UnknownCluster",
            ApiError::NotFound(_) => "NotFound",
            ApiError::Unauthorized => "Unauthorized",
            ApiError::BadRequest(_) => "BadRequest",
            ApiError::Storage(_) => "Storage",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ApiError::Unauthorized => 401,
            ApiError::ChannelNotFound(_)
            | ApiError::VersionNotFound { .. }
            | ApiError::SubscriptionNotFound(_)
            | ApiError::UnknownCluster(_)
            | ApiError::NotFound(_) => 404,
            ApiError::DuplicateChannel(_)
            | ApiError::DuplicateSubscription(_)
            | ApiError::VersionExists { .. }
            | ApiError::ChannelInUse(_) => 409,
            ApiError::Storage(_) => 500,
            _ => 400,
        }
    }

    pub fn to_response(&self) -> HttpResponse {
        HttpResponse::json(
            self.http_status(),
            &json!({"status": "error", "code": self.code(), "message": self.to_string()}),
        )
    }
}
