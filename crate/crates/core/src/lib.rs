//! Pull-based multi-cluster continuous deployment.
//!
//! A control plane publishes immutable, versioned manifest bundles on named
//! channels and binds them to cluster tags through subscriptions. Agents on
//! each cluster poll for matching subscriptions, pull the bundles and apply
//! them to the cluster's resource store, and report the state of labelled
//! resources back. An operator runtime reconciles custom resources into
//! workloads, and a deterministic simulator compares rollout time under the
//! pull model against a central push pipeline.

pub mod agent;
pub mod auth;
pub mod bundle;
pub mod clock;
pub mod cluster;
pub mod control_plane;
pub mod hash;
pub mod http;
pub mod net;
pub mod operator;
pub mod sim;
