//! The pull model: one control plane, N clusters each running an agent and
//! an operator host, advanced on a shared logical clock.
//!
//! Each step advances to the earliest pending wake-up, applies global events
//! due then (faults, the version flip, instance creation, alert checks) in a
//! fixed order, then steps every due cluster. Cluster steps touch only their
//! own store and thread-safe control-plane state, and their trace lines are
//! merged in cluster order, so the trace is independent of [`ExecMode`].

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;
use crate::agent::{
    rr_key, Agent, AgentConfig, FaultyClient, InProcessClient, RemoteResourceStatus,
};
use crate::auth::Credentials;
use crate::bundle::Bundle;
use crate::clock::{ManualClock, Timestamp};
use crate::cluster::{ClusterApi, ClusterStore, ListParams, ResourceKey};
use crate::control_plane::{AlertCondition, ControlPlane, MemoryArtifactStore, TagSet};
use crate::hash::ContentHash;
use crate::http::{HttpRequest, HttpResponse};
use crate::operator::{
    build_operator_bundle, nginx_crd, OperatorHost, NGINX_API, NGINX_KIND, OPERATOR_NAME,
    OPERATOR_NAMESPACE,
};

pub const CHANNEL: &str = "nginx-operator";
pub const SUBSCRIPTION: &str = "nginx-test";
pub const INITIAL_VERSION: &str = "1.0";
pub const UPGRADE_VERSION: &str = "2.0";
pub const INSTANCE_NAMESPACE: &str = "nginx-demo";
pub const SIM_ORG_KEY: &str = "sim-org-key";

pub fn sim_credentials() -> Credentials {
    Credentials::new(SIM_ORG_KEY, "sim-api-key", "sim-admin")
}

pub fn cluster_name(i: usize) -> String {
    format!("cluster-{i:04}")
}

fn operator_deployment() -> ResourceKey {
    ResourceKey::new("apps/v1", "Deployment", OPERATOR_NAMESPACE, OPERATOR_NAME)
}

pub struct SimCluster {
    pub id: String,
    pub tags: TagSet,
    /// Tags cover the subscription.
    pub matching: bool,
    pub store: ClusterStore,
    pub agent: Agent,
    pub host: OperatorHost,
    api: ClusterApi,
    start_at: Timestamp,
    wake: Timestamp,
    offline_until: Timestamp,
    instances_created: bool,
    /// When the RemoteResource applied the target version.
    pub applied_at: Option<Timestamp>,
    /// When the operator and every instance serve the target version.
    pub workload_at: Option<Timestamp>,
    pub reconcile_passes: usize,
}

impl SimCluster {
    pub fn bearer_token(&self) -> String {
        format!("token-{}", self.id)
    }

    pub fn applied_hash(&self, sub_id: &str) -> Option<ContentHash> {
        self.store
            .find(&rr_key(sub_id))
            .and_then(|o| RemoteResourceStatus::of(o).applied_hash)
    }

    pub fn operator_version(&self) -> Option<&str> {
        self.store
            .find(&operator_deployment())?
            .annotations
            .get("version")
            .map(String::as_str)
    }

    /// `status.servedVersion` of every Nginx resource.
    pub fn served_versions(&self) -> Vec<Option<String>> {
        let mut p = ListParams::kind(NGINX_KIND);
        p.api_version = Some(NGINX_API.into());
        self.store
            .list(&p)
            .into_iter()
            .map(|o| {
                o.status
                    .get("servedVersion")
                    .and_then(|v| v.as_str())
                    .map(String::from)
            })
            .collect()
    }

    fn workload_on(&self, version: &str, expected_instances: usize) -> bool {
        let served = self.served_versions();
        self.operator_version() == Some(version)
            && served.len() == expected_instances
            && served.iter().all(|v| v.as_deref() == Some(version))
    }

    fn next_wake(&self) -> Timestamp {
        let agent = if self.agent.next_wake() == 0 {
            self.start_at
        } else {
            self.agent.next_wake()
        };
        let agent = agent.max(self.offline_until);
        let mut t = self.wake.min(agent);
        if let Some(h) = self.host.next_due() {
            t = t.min(h);
        }
        t
    }
}

#[derive(Clone, Copy)]
struct StepContext<'a> {
    now: Timestamp,
    client: &'a InProcessClient,
    artifacts_down: bool,
    sub_id: &'a str,
    target_hash: &'a ContentHash,
    target_version: &'a str,
    expected_instances: usize,
}

fn step_cluster(c: &mut SimCluster, cx: &StepContext<'_>) -> Vec<String> {
    let t = cx.now;
    let mut lines = Vec::new();
    if c.next_wake() > t {
        return lines;
    }
    c.wake = Timestamp::MAX;
    if t >= c.offline_until {
        let mut client = FaultyClient::new(cx.client);
        client.artifacts_down = cx.artifacts_down;
        let s = c.agent.tick(&client, &mut c.store, t);
        lines.push(format!(
            "t={t} {} tick synced={} created={} updated={} pruned={} reconciled={} mutations={} scanned={} events={} sent={} errors={}",
            c.id,
            u8::from(s.synced),
            s.sync.created,
            s.sync.updated,
            s.sync.pruned,
            s.reconciled,
            s.mutations,
            u8::from(s.scanned),
            s.event_reports,
            s.reports_sent,
            s.errors.join("; "),
        ));
    }
    match c.host.run_to_quiescence(&mut c.store, t) {
        Ok(0) => {}
        Ok(passes) => {
            c.reconcile_passes += passes;
            lines.push(format!(
                "t={t} {} reconcile passes={passes} seq={}",
                c.id,
                c.store.sequence()
            ));
        }
        Err(e) => lines.push(format!("t={t} {} reconcile error={e}", c.id)),
    }
    if c.applied_at.is_none() && c.applied_hash(cx.sub_id).as_ref() == Some(cx.target_hash) {
        c.applied_at = Some(t);
        lines.push(format!(
            "t={t} {} applied version={}",
            c.id, cx.target_version
        ));
    }
    if c.workload_at.is_none() && c.workload_on(cx.target_version, cx.expected_instances) {
        c.workload_at = Some(t);
        lines.push(format!(
            "t={t} {} workload version={}",
            c.id, cx.target_version
        ));
    }
    lines
}

pub struct PullSim {
    cfg: SimConfig,
    plane: Arc<ControlPlane>,
    clock: Arc<ManualClock>,
    client: InProcessClient,
    clusters: Vec<SimCluster>,
    sub_id: String,
    hashes: [ContentHash; 2],
    flipped: bool,
    now: Timestamp,
    started: bool,
    artifacts_down_until: Timestamp,
    faults: Vec<FaultSpec>,
    next_fault: usize,
    next_alert_check: Timestamp,
    alerts_seen: BTreeSet<(String, String)>,
    trace: Vec<String>,
    events_processed: u64,
    admin_cluster_actions: Vec<Timestamp>,
}

impl PullSim {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let clock = Arc::new(ManualClock::new(0));
        let plane = Arc::new(ControlPlane::new(
            sim_credentials(),
            Arc::new(MemoryArtifactStore::new()),
            clock.clone(),
        ));
        let client = InProcessClient::new(plane.clone(), SIM_ORG_KEY);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let jitter = cfg.start_jitter();
        let clusters = (0..cfg.num_clusters)
            .map(|i| {
                let tags = cfg.tags_for(i);
                let mut ac = AgentConfig::new(cluster_name(i), SIM_ORG_KEY, tags.clone());
                ac.poll_interval = cfg.poll_interval;
                ac.report_interval = cfg.report_interval;
                ac.watch_debounce = cfg.watch_debounce;
                let start_at = if jitter == 0 {
                    0
                } else {
                    rng.gen_range(0..jitter)
                };
                let store = ClusterStore::new();
                let host = OperatorHost::new(&store, 0);
                let id = cluster_name(i);
                SimCluster {
                    matching: cfg.subscription_tags.is_subset(&tags),
                    api: ClusterApi::new(format!("token-{id}")),
                    id,
                    tags,
                    store,
                    agent: Agent::new(ac),
                    host,
                    start_at,
                    wake: start_at,
                    offline_until: 0,
                    instances_created: false,
                    applied_at: None,
                    workload_at: None,
                    reconcile_passes: 0,
                }
            })
            .collect();

        let mut faults = cfg.faults.clone();
        faults.sort_by_key(|f| f.at);
        let mut sim = PullSim {
            plane,
            clock,
            client,
            clusters,
            sub_id: String::new(),
            hashes: [
                ContentHash::from(String::new()),
                ContentHash::from(String::new()),
            ],
            flipped: false,
            now: 0,
            started: false,
            artifacts_down_until: 0,
            faults,
            next_fault: 0,
            next_alert_check: 0,
            alerts_seen: BTreeSet::new(),
            trace: Vec::new(),
            events_processed: 0,
            admin_cluster_actions: Vec::new(),
            cfg,
        };
        sim.publish()?;
        Ok(sim)
    }

    fn log(&mut self, line: String) {
        self.trace.push(line);
    }

    fn publish(&mut self) -> Result<(), SimError> {
        let creds = sim_credentials();
        let plane = self.plane.clone();
        plane.create_channel(CHANNEL)?;
        for (i, v) in [INITIAL_VERSION, UPGRADE_VERSION].into_iter().enumerate() {
            let bundle = build_operator_bundle(v);
            let receipt = plane.upload_version(CHANNEL, v, &bundle, &creds)?;
            self.hashes[i] = Bundle::parse(&bundle)
                .expect("operator bundle parses")
                .content_hash();
            self.log(format!(
                "t=0 admin upload {CHANNEL} {v} uid={}",
                receipt.version.uid
            ));
        }
        let sub = plane.create_subscription(
            SUBSCRIPTION,
            CHANNEL,
            INITIAL_VERSION,
            self.cfg.subscription_tags.clone(),
        )?;
        self.log(format!(
            "t=0 admin subscribe {SUBSCRIPTION} {INITIAL_VERSION} id={}",
            sub.id
        ));
        self.sub_id = sub.id;
        let silence = 3 * self.cfg.poll_interval;
        plane.create_alert_rule(
            "cluster-silent",
            AlertCondition::ClusterStale {
                max_silence: silence,
            },
            None,
        )?;
        self.log(format!(
            "t=0 admin alert cluster_stale max_silence={silence}"
        ));
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn plane(&self) -> &Arc<ControlPlane> {
        &self.plane
    }

    pub fn clusters(&self) -> &[SimCluster] {
        &self.clusters
    }

    pub fn cluster_mut(&mut self, i: usize) -> &mut SimCluster {
        &mut self.clusters[i]
    }

    pub fn subscription_id(&self) -> &str {
        &self.sub_id
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn version_hash(&self, version: &str) -> &ContentHash {
        if version == UPGRADE_VERSION {
            &self.hashes[1]
        } else {
            &self.hashes[0]
        }
    }

    pub fn target_version(&self) -> &'static str {
        if self.flipped {
            UPGRADE_VERSION
        } else {
            INITIAL_VERSION
        }
    }

    fn instances_pending(&self) -> bool {
        self.cfg.instances_per_cluster > 0
            && self
                .clusters
                .iter()
                .any(|c| c.matching && !c.instances_created)
    }

    /// Earliest pending wake-up.
    pub fn next_time(&self) -> Timestamp {
        let mut t = self
            .clusters
            .iter()
            .map(SimCluster::next_wake)
            .min()
            .unwrap_or(Timestamp::MAX);
        if let Some(f) = self.faults.get(self.next_fault) {
            t = t.min(f.at);
        }
        if let Some(f) = self.cfg.flip_at.filter(|_| !self.flipped) {
            t = t.min(f);
        }
        if self.instances_pending() && self.now < self.cfg.instances_at() {
            t = t.min(self.cfg.instances_at());
        }
        t.min(self.next_alert_check)
    }

    /// Clusters whose convergence counts: matching and not offline forever.
    fn is_done(&self) -> bool {
        if self.cfg.flip_at.is_some() && !self.flipped {
            return false;
        }
        !self.instances_pending()
            && self
                .clusters
                .iter()
                .filter(|c| c.matching)
                .all(|c| c.applied_at.is_some() && c.workload_at.is_some())
    }

    /// Send an administrator request to a cluster's API. Recorded in the
    /// trace as a cluster-side admin action.
    pub fn admin_cluster_request(&mut self, cluster: usize, req: HttpRequest) -> HttpResponse {
        let now = self.now;
        let c = &mut self.clusters[cluster];
        let req = req.with_header("authorization", format!("Bearer {}", c.bearer_token()));
        let resp = c.api.handle(&mut c.store, &req);
        c.wake = now;
        let line = format!(
            "t={now} admin-cluster {} {} {} -> {}",
            c.id, req.method, req.path, resp.status
        );
        self.admin_cluster_actions.push(now);
        self.log(line);
        resp
    }

    fn create_instances(&mut self) {
        let crd = nginx_crd();
        let per = self.cfg.instances_per_cluster;
        for i in 0..self.clusters.len() {
            let c = &self.clusters[i];
            if !c.matching || c.instances_created || !c.store.has_crd(&crd.group, &crd.kind) {
                continue;
            }
            for n in 0..per {
                let doc = json!({
                    "apiVersion": NGINX_API,
                    "kind": NGINX_KIND,
                    "metadata": {
                        "name": format!("example-nginx-{n}"),
                        "namespace": INSTANCE_NAMESPACE,
                        "labels": {"razeedash/watch-resource": "lite"},
                    },
                    "spec": {"replicaCount": self.cfg.instance_replicas, "ingress": {"enabled": self.cfg.instance_ingress}},
                });
                let path = format!(
                    "/apis/{}/namespaces/{INSTANCE_NAMESPACE}/{}",
                    NGINX_API, crd.plural
                );
                self.admin_cluster_request(i, HttpRequest::post(&path).with_json(&doc));
            }
            let c = &mut self.clusters[i];
            c.instances_created = true;
            c.workload_at = None;
        }
    }

    fn apply_faults(&mut self, t: Timestamp) {
        while let Some(f) = self
            .faults
            .get(self.next_fault)
            .filter(|f| f.at <= t)
            .cloned()
        {
            self.next_fault += 1;
            self.events_processed += 1;
            let line = match &f.kind {
                FaultKind::KillPod {
                    cluster,
                    namespace,
                    name,
                } => {
                    let c = &mut self.clusters[*cluster];
                    let key = ResourceKey::new("v1", "Pod", namespace, name);
                    let hit = c.store.delete(&key).is_ok();
                    c.wake = t;
                    format!("t={t} fault kill_pod {} {key} hit={}", c.id, u8::from(hit))
                }
                FaultKind::AgentOffline { cluster, until } => {
                    let c = &mut self.clusters[*cluster];
                    c.offline_until = c.offline_until.max(*until);
                    format!("t={t} fault agent_offline {} until={until}", c.id)
                }
                FaultKind::ArtifactUnreachable { until } => {
                    self.artifacts_down_until = self.artifacts_down_until.max(*until);
                    format!("t={t} fault artifact_unreachable until={until}")
                }
            };
            self.log(line);
        }
    }

    fn flip(&mut self, t: Timestamp) -> Result<(), SimError> {
        let sub = self
            .plane
            .set_subscription_version(&self.sub_id, UPGRADE_VERSION)?;
        self.flipped = true;
        self.events_processed += 1;
        for c in &mut self.clusters {
            c.applied_at = None;
            c.workload_at = None;
        }
        self.log(format!(
            "t={t} admin flip {SUBSCRIPTION} {UPGRADE_VERSION} revision={}",
            sub.revision
        ));
        Ok(())
    }

    fn check_alerts(&mut self, t: Timestamp) {
        for f in self.plane.evaluate_alerts(t) {
            if self
                .alerts_seen
                .insert((f.rule_id.clone(), f.subject.clone()))
            {
                self.log(format!(
                    "t={t} alert {} subject={} since={}",
                    f.rule_name, f.subject, f.since
                ));
            }
        }
        self.next_alert_check = t + self.cfg.poll_interval;
    }

    /// Advance to the next wake-up and process it. Returns the new time.
    pub fn step(&mut self) -> Result<Timestamp, SimError> {
        let t = if self.started { self.next_time() } else { 0 };
        self.started = true;
        if t > self.cfg.horizon {
            return Err(SimError::HorizonExceeded(Box::new(self.report(t))));
        }
        self.now = t;
        self.clock.set(t);

        self.apply_faults(t);
        if self.cfg.flip_at.is_some_and(|f| f <= t) && !self.flipped {
            self.flip(t)?;
        }
        let target_version = self.target_version();
        let target_hash = self.version_hash(target_version).clone();
        let expected_instances = self.cfg.instances_per_cluster;
        let cx = StepContext {
            now: t,
            client: &self.client,
            artifacts_down: t < self.artifacts_down_until,
            sub_id: &self.sub_id,
            target_hash: &target_hash,
            target_version,
            expected_instances,
        };
        let outputs = exec::map_mut(self.cfg.exec, &mut self.clusters, |c| {
            let expected = if c.instances_created {
                expected_instances
            } else {
                0
            };
            step_cluster(
                c,
                &StepContext {
                    expected_instances: expected,
                    ..cx
                },
            )
        });
        for lines in outputs {
            if !lines.is_empty() {
                self.events_processed += 1;
            }
            for l in lines {
                self.log(l);
            }
        }
        if t >= self.cfg.instances_at() && self.instances_pending() {
            self.create_instances();
        }
        if t >= self.next_alert_check {
            self.check_alerts(t);
        }
        Ok(t)
    }

    /// Step until every matching cluster runs the target version everywhere.
    pub fn run(&mut self) -> Result<SimReport, SimError> {
        loop {
            let t = self.step()?;
            if self.is_done() {
                return Ok(self.report(t));
            }
        }
    }

    /// Step while the next wake-up is at or before `until`.
    pub fn run_until(&mut self, until: Timestamp) -> Result<(), SimError> {
        while !self.started || self.next_time() <= until {
            self.step()?;
        }
        Ok(())
    }

    pub fn report(&self, end: Timestamp) -> SimReport {
        let origin = if self.flipped {
            self.cfg.flip_at.unwrap_or(0)
        } else {
            0
        };
        let per_cluster_times: Vec<ClusterTime> = self
            .clusters
            .iter()
            .filter(|c| c.matching)
            .map(|c| ClusterTime {
                cluster_id: c.id.clone(),
                applied: c.applied_at.map(|a| a.saturating_sub(origin)),
                workload: c.workload_at.map(|w| w.saturating_sub(origin)),
            })
            .collect();
        let max_of = |f: fn(&ClusterTime) -> Option<u64>| {
            per_cluster_times
                .iter()
                .map(f)
                .try_fold(0, |acc, x| x.map(|x| acc.max(x)))
        };
        let flip_at = self.cfg.flip_at;
        SimReport {
            model: RolloutModel::Pull,
            num_clusters: self.clusters.len(),
            matching_clusters: per_cluster_times.len(),
            convergence_time: max_of(|c| c.applied),
            workload_convergence_time: max_of(|c| c.workload),
            per_cluster_times,
            events_processed: self.events_processed,
            alerts_fired: self.alerts_seen.len(),
            admin_cluster_actions_after_flip: flip_at.map_or(0, |f| {
                self.admin_cluster_actions
                    .iter()
                    .filter(|t| **t >= f)
                    .count()
            }),
            end_time: end,
            trace_len: self.trace.len(),
            trace_digest: digest_lines(&self.trace),
        }
    }
}

pub fn run_pull_rollout(cfg: &SimConfig) -> Result<SimReport, SimError> {
    PullSim::new(cfg.clone())?.run()
}

impl PullSim {
    /// Remove the rollout's subscription at the current time.
    pub fn admin_delete_subscription(&mut self) -> Result<(), SimError> {
        self.plane.delete_subscription(&self.sub_id)?;
        let line = format!("t={} admin unsubscribe {SUBSCRIPTION}", self.now);
        self.log(line);
        Ok(())
    }

    /// Run the operator host of one cluster for a single pass.
    pub fn reconcile_pass(&mut self, cluster: usize) -> usize {
        let now = self.now;
        let c = &mut self.clusters[cluster];
        let stats = c.host.run_pass(&mut c.store, now);
        c.reconcile_passes += 1;
        let line = format!(
            "t={now} {} reconcile pass actions={} seq={}",
            c.id,
            stats.actions,
            c.store.sequence()
        );
        self.log(line);
        stats.actions
    }
}
