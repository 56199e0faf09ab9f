//! Scripted end-to-end flows over the pull simulation. Each check is
//! recorded in order and the first failing one aborts the scenario.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::*;
use crate::agent::SUB_ID_ANNOTATION;
use crate::cluster::{ClusterStore, ListParams, ResourceKey, CRD_KIND};
use crate::control_plane::TagSet;
use crate::http::HttpRequest;
use crate::operator::{
    nginx_key, NGINX_API, NGINX_KIND, NGINX_PLURAL, OPERATOR_NAME, OPERATOR_NAMESPACE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    OperatorDeploy,
    InstanceLifecycle,
    PodHeal,
    OperatorUpgrade,
    CascadeDelete,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::OperatorDeploy,
        Scenario::InstanceLifecycle,
        Scenario::PodHeal,
        Scenario::OperatorUpgrade,
        Scenario::CascadeDelete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::OperatorDeploy => "operator_deploy",
            Scenario::InstanceLifecycle => "instance_lifecycle",
            Scenario::PodHeal => "pod_heal",
            Scenario::OperatorUpgrade => "operator_upgrade",
            Scenario::CascadeDelete => "cascade_delete",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s.replace('-', "_"))
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown scenario {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub checks: Vec<ScenarioCheck>,
    pub trace: Vec<String>,
    pub trace_digest: String,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Checks {
    scenario: Scenario,
    checks: Vec<ScenarioCheck>,
}

impl Checks {
    fn check(
        &mut self,
        name: &str,
        passed: bool,
        detail: impl Into<String>,
    ) -> Result<(), SimError> {
        let detail = detail.into();
        self.checks.push(ScenarioCheck {
            name: name.into(),
            passed,
            detail: detail.clone(),
        });
        if passed {
            Ok(())
        } else {
            Err(SimError::ScenarioFailed {
                scenario: self.scenario.to_string(),
                check: format!("{name}: {detail}"),
            })
        }
    }
}

fn tags(t: &[&str]) -> TagSet {
    t.iter().map(|s| s.to_string()).collect()
}

fn base_config(num_clusters: usize) -> SimConfig {
    SimConfig {
        num_clusters,
        flip_at: None,
        ..SimConfig::default()
    }
}

fn operator_deployment_key() -> ResourceKey {
    ResourceKey::new("apps/v1", "Deployment", OPERATOR_NAMESPACE, OPERATOR_NAME)
}

fn has_operator(store: &ClusterStore) -> bool {
    store.contains(&operator_deployment_key()) && store.crd_for_plural(NGINX_PLURAL).is_some()
}

/// Objects whose owner chain reaches `root`.
pub fn transitively_owned(store: &ClusterStore, root: &ResourceKey) -> Vec<ResourceKey> {
    let mut owned: BTreeSet<ResourceKey> = BTreeSet::new();
    let mut frontier = vec![root.clone()];
    while let Some(owner) = frontier.pop() {
        for o in store.objects().filter(|o| o.owner_refs.contains(&owner)) {
            if owned.insert(o.key.clone()) {
                frontier.push(o.key.clone());
            }
        }
    }
    owned.into_iter().collect()
}

fn count_kind(store: &ClusterStore, kind: &str, ns: &str) -> usize {
    store.list(&ListParams::kind(kind).in_namespace(ns)).len()
}

fn running_pods(store: &ClusterStore, ns: &str) -> usize {
    store
        .list(&ListParams::kind("Pod").in_namespace(ns))
        .iter()
        .filter(|p| p.phase() == Some("Running"))
        .count()
}

fn deployment_ready(store: &ClusterStore, ns: &str) -> Vec<u64> {
    store
        .list(&ListParams::kind("Deployment").in_namespace(ns))
        .iter()
        .map(|d| {
            d.status
                .get("readyReplicas")
                .and_then(|v| v.as_u64())
                .unwrap_or(0)
        })
        .collect()
}

pub fn run_e2e_scenario(scenario: Scenario) -> Result<ScenarioResult, SimError> {
    let mut ck = Checks {
        scenario,
        checks: Vec::new(),
    };
    let sim = match scenario {
        Scenario::OperatorDeploy => operator_deploy(&mut ck)?,
        Scenario::InstanceLifecycle => instance_lifecycle(&mut ck)?,
        Scenario::PodHeal => pod_heal(&mut ck)?,
        Scenario::OperatorUpgrade => operator_upgrade(&mut ck)?,
        Scenario::CascadeDelete => cascade_delete(&mut ck)?,
    };
    Ok(ScenarioResult {
        name: scenario.to_string(),
        checks: ck.checks,
        trace_digest: digest_lines(sim.trace()),
        trace: sim.trace().to_vec(),
    })
}

fn operator_deploy(ck: &mut Checks) -> Result<PullSim, SimError> {
    let mut cfg = base_config(4);
    cfg.cluster_tags = vec![
        tags(&["demo"]),
        tags(&["demo"]),
        tags(&["demo"]),
        tags(&["other"]),
    ];
    cfg.instances_per_cluster = 0;
    let mut sim = PullSim::new(cfg)?;
    let report = sim.run()?;
    ck.check(
        "matching clusters",
        report.matching_clusters == 3,
        format!("{} of 4 match", report.matching_clusters),
    )?;
    for c in sim.clusters() {
        let expected = c.matching;
        ck.check(
            &format!("{} operator present", c.id),
            has_operator(&c.store) == expected,
            format!("expected {expected}"),
        )?;
        let managed = c
            .store
            .objects()
            .filter(|o| o.annotations.contains_key(SUB_ID_ANNOTATION))
            .count();
        ck.check(
            &format!("{} managed objects", c.id),
            (managed > 0) == expected,
            format!("{managed} objects carry a subscription id"),
        )?;
    }
    Ok(sim)
}

fn instance_lifecycle(ck: &mut Checks) -> Result<PullSim, SimError> {
    let mut cfg = base_config(1);
    cfg.instance_replicas = 1;
    cfg.instance_ingress = true;
    let mut sim = PullSim::new(cfg)?;
    sim.run()?;
    let cr = nginx_key(INSTANCE_NAMESPACE, "example-nginx-0");
    {
        let store = &sim.clusters()[0].store;
        ck.check("instance exists", store.contains(&cr), cr.to_string())?;
        let owned = transitively_owned(store, &cr);
        let kinds: Vec<&str> = owned.iter().map(|k| k.kind.as_str()).collect();
        for (kind, n) in [("Deployment", 1), ("Service", 1), ("Route", 1), ("Pod", 1)] {
            let found = kinds.iter().filter(|k| **k == kind).count();
            ck.check(
                &format!("owned {kind}"),
                found == n,
                format!("{found} owned by {cr}"),
            )?;
        }
        let stray = store
            .objects()
            .filter(|o| o.key.namespace == INSTANCE_NAMESPACE && o.key != cr)
            .count();
        ck.check(
            "no unowned workload objects",
            stray == owned.len(),
            format!("{stray} objects, {} owned", owned.len()),
        )?;
    }
    let path =
        format!("/apis/{NGINX_API}/namespaces/{INSTANCE_NAMESPACE}/{NGINX_PLURAL}/example-nginx-0");
    let resp = sim.admin_cluster_request(0, HttpRequest::new("DELETE", &path));
    ck.check(
        "delete accepted",
        resp.is_success(),
        format!("status {}", resp.status),
    )?;
    let until = sim.now() + sim.config().poll_interval;
    sim.run_until(until)?;
    let store = &sim.clusters()[0].store;
    let orphans = transitively_owned(store, &cr);
    ck.check(
        "zero orphans",
        orphans.is_empty() && !store.contains(&cr),
        format!("{} objects still owned", orphans.len()),
    )?;
    let left = store
        .objects()
        .filter(|o| o.key.namespace == INSTANCE_NAMESPACE)
        .count();
    ck.check("namespace empty", left == 0, format!("{left} objects left"))?;
    Ok(sim)
}

fn pod_heal(ck: &mut Checks) -> Result<PullSim, SimError> {
    let mut cfg = base_config(1);
    cfg.instance_replicas = 3;
    let mut sim = PullSim::new(cfg)?;
    sim.run()?;
    ck.check(
        "ready before",
        deployment_ready(&sim.clusters()[0].store, INSTANCE_NAMESPACE) == [3],
        "3 ready replicas",
    )?;
    let victim = sim.clusters()[0]
        .store
        .list(&ListParams::kind("Pod").in_namespace(INSTANCE_NAMESPACE))
        .first()
        .map(|p| p.key.clone())
        .ok_or_else(|| SimError::ScenarioFailed {
            scenario: ck.scenario.to_string(),
            check: "no pod to kill".into(),
        })?;
    sim.cluster_mut(0)
        .store
        .delete(&victim)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    ck.check(
        "pod killed",
        count_kind(&sim.clusters()[0].store, "Pod", INSTANCE_NAMESPACE) == 2,
        victim.to_string(),
    )?;
    let healed = |store: &ClusterStore| {
        deployment_ready(store, INSTANCE_NAMESPACE) == [3]
            && running_pods(store, INSTANCE_NAMESPACE) == 3
    };
    let mut passes = 0;
    while passes < 3 && !healed(&sim.clusters()[0].store) {
        sim.reconcile_pass(0);
        passes += 1;
    }
    let ready = deployment_ready(&sim.clusters()[0].store, INSTANCE_NAMESPACE);
    ck.check(
        "healed within 3 passes",
        healed(&sim.clusters()[0].store),
        format!("ready {ready:?} after {passes} passes"),
    )?;
    let pods = count_kind(&sim.clusters()[0].store, "Pod", INSTANCE_NAMESPACE);
    ck.check(
        "pod recreated",
        pods == 3 && sim.clusters()[0].store.contains(&victim),
        format!("{pods} pods"),
    )?;
    Ok(sim)
}

fn operator_upgrade(ck: &mut Checks) -> Result<PullSim, SimError> {
    let cfg = SimConfig {
        num_clusters: 3,
        ..SimConfig::default()
    };
    let poll = cfg.poll_interval;
    let mut sim = PullSim::new(cfg)?;
    let report = sim.run()?;
    let t = report.workload_convergence_time;
    ck.check(
        "converged within 2 polls",
        t.is_some_and(|t| t <= 2 * poll),
        format!("{t:?}"),
    )?;
    for c in sim.clusters() {
        ck.check(
            &format!("{} operator", c.id),
            c.operator_version() == Some(UPGRADE_VERSION),
            format!("{:?}", c.operator_version()),
        )?;
        let served = c.served_versions();
        ck.check(
            &format!("{} served", c.id),
            !served.is_empty() && served.iter().all(|v| v.as_deref() == Some(UPGRADE_VERSION)),
            format!("{served:?}"),
        )?;
    }
    ck.check(
        "no cluster-side admin actions",
        report.admin_cluster_actions_after_flip == 0,
        format!("{}", report.admin_cluster_actions_after_flip),
    )?;
    Ok(sim)
}

fn cascade_delete(ck: &mut Checks) -> Result<PullSim, SimError> {
    let cfg = base_config(2);
    let poll = cfg.poll_interval;
    let mut sim = PullSim::new(cfg)?;
    sim.run()?;
    ck.check(
        "deployed",
        sim.clusters().iter().all(|c| has_operator(&c.store)),
        "operator on every cluster",
    )?;
    sim.admin_delete_subscription()?;
    let until = sim.now() + 2 * poll;
    sim.run_until(until)?;
    for c in sim.clusters() {
        let managed = c
            .store
            .objects()
            .filter(|o| o.annotations.contains_key(SUB_ID_ANNOTATION))
            .count();
        ck.check(
            &format!("{} pruned", c.id),
            managed == 0,
            format!("{managed} managed objects left"),
        )?;
        let mut nginx = ListParams::kind(NGINX_KIND);
        nginx.api_version = Some(NGINX_API.into());
        let leftovers: Vec<String> = c
            .store
            .objects()
            .filter(|o| o.key.kind != CRD_KIND || o.key.name.starts_with(NGINX_PLURAL))
            .filter(|o| {
                o.key.namespace == INSTANCE_NAMESPACE
                    || o.key.namespace == OPERATOR_NAMESPACE
                    || o.key.kind == CRD_KIND
            })
            .map(|o| o.key.to_string())
            .collect();
        ck.check(
            &format!("{} workload gone", c.id),
            leftovers.is_empty() && c.store.list(&nginx).is_empty(),
            format!("{leftovers:?}"),
        )?;
    }
    Ok(sim)
}
