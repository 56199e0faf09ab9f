use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::bundle::Bundle;
use crate::cluster::{ClusterStore, ResourceKey, ResourceObject, WatchFilter, CRD_KIND};

fn apply_bundle(store: &mut ClusterStore, bytes: &[u8]) {
    let bundle = Bundle::parse(bytes).unwrap();
    let mut objs: Vec<ResourceObject> = bundle
        .documents()
        .iter()
        .map(|d| ResourceObject::from_document(d, "default").unwrap())
        .collect();
    objs.sort_by_key(|o| o.key.kind != CRD_KIND);
    for o in objs {
        store.apply(o).unwrap();
    }
}

fn cm(name: &str, v: i64) -> ResourceObject {
    ResourceObject::new(
        ResourceKey::new("v1", "ConfigMap", "default", name),
        json!({"v": v}),
    )
}

fn deployment(name: &str, replicas: u64, version: &str) -> ResourceObject {
    ResourceObject::new(
        deployment_key("default", name),
        json!({"replicas": replicas, "template": {"metadata": {"labels": {"app": name}, "annotations": {"version": version}}, "spec": {}}}),
    )
}

fn pod_versions(store: &ClusterStore, dep: &ResourceKey) -> Vec<String> {
    owned_pods(store, dep)
        .iter()
        .map(|p| p.annotations["version"].clone())
        .collect()
}

struct Counting {
    calls: Vec<ResourceKey>,
    fail: bool,
    panic_on: Option<String>,
}

impl Reconciler for Counting {
    fn name(&self) -> &str {
        "counting"
    }
    fn watched(&self) -> WatchFilter {
        WatchFilter::kind("ConfigMap")
    }
    fn reconcile(&mut self, _: &mut ClusterStore, key: &ResourceKey, _: u64) -> ReconcileOutcome {
        self.calls.push(key.clone());
        if self.panic_on.as_deref() == Some(key.name.as_str()) {
            panic!("boom");
        }
        if self.fail {
            ReconcileOutcome::error("nope", 0)
        } else {
            ReconcileOutcome::done(0)
        }
    }
}

fn counting(store: &ClusterStore, fail: bool, panic_on: Option<&str>) -> ControllerLoop {
    let r = Counting {
        calls: vec![],
        fail,
        panic_on: panic_on.map(String::from),
    };
    ControllerLoop::new(Box::new(r), Backoff::default(), store, 0)
}

#[test]
fn backoff_doubles_to_cap() {
    let b = Backoff {
        initial: 5,
        multiplier: 2,
        cap: 30,
    };
    let d: Vec<u64> = (1..=5).map(|n| b.delay(n)).collect();
    assert_eq!(d, vec![5, 10, 20, 30, 30]);
}

#[test]
fn single_create_single_reconcile() {
    let mut store = ClusterStore::new();
    let mut l = counting(&store, false, None);
    store.apply(cm("a", 1)).unwrap();
    l.observe(&store, 0);
    assert_eq!(l.step(&mut store, 0).reconciles, 1);
    l.observe(&store, 0);
    assert_eq!(l.step(&mut store, 0).reconciles, 0);
}

#[test]
fn rapid_modifications_are_deduplicated() {
    let mut store = ClusterStore::new();
    let mut l = counting(&store, false, None);
    for v in 0..5 {
        store.apply(cm("a", v)).unwrap();
    }
    l.observe(&store, 0);
    let n = l.step(&mut store, 0).reconciles;
    assert!((1..=5).contains(&n));
    assert_eq!(n, 1);
}

#[test]
fn errors_back_off_exponentially() {
    let mut store = ClusterStore::new();
    let mut l = counting(&store, true, None);
    store.apply(cm("a", 1)).unwrap();
    l.observe(&store, 0);
    l.step(&mut store, 0);
    assert_eq!(l.next_due(), Some(1));
    assert_eq!(l.step(&mut store, 0).reconciles, 0);
    l.step(&mut store, 1);
    assert_eq!(l.next_due(), Some(3));
    l.step(&mut store, 3);
    assert_eq!(l.next_due(), Some(7));
    assert_eq!(l.stats().errors, 3);
}

#[test]
fn panics_are_isolated_per_key() {
    let mut store = ClusterStore::new();
    store.apply(cm("bad", 1)).unwrap();
    store.apply(cm("good", 1)).unwrap();
    let mut l = counting(&store, false, Some("bad"));
    let prev = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let pass = l.step(&mut store, 0);
    std::panic::set_hook(prev);
    assert_eq!(pass.reconciles, 2);
    assert_eq!(pass.errors, 1);
    assert_eq!(l.stats().panics, 1);
    assert_eq!(l.pending(), 1);
}

#[test]
fn one_controller_per_kind() {
    let store = ClusterStore::new();
    let mut m = ControllerManager::new();
    m.register(counting(&store, false, None)).unwrap();
    assert!(matches!(
        m.register(counting(&store, false, None)),
        Err(OperatorError::DuplicateController { .. })
    ));
}

fn run_deployments(store: &mut ClusterStore) -> (ControllerManager, usize) {
    let mut m = ControllerManager::new();
    m.register(ControllerLoop::new(
        Box::new(DeploymentController),
        Backoff::default(),
        store,
        0,
    ))
    .unwrap();
    let passes = m.run_to_quiescence(store, 0, 50).unwrap();
    (m, passes)
}

#[test]
fn killed_pod_is_recreated_next_pass() {
    let mut store = ClusterStore::new();
    store.apply(deployment("web", 3, "1.0")).unwrap();
    let (mut m, _) = run_deployments(&mut store);
    let dep = deployment_key("default", "web");
    assert_eq!(owned_pods(&store, &dep).len(), 3);

    store.delete(&pod_key("default", "web-1")).unwrap();
    m.run_pass(&mut store, 1);
    assert_eq!(store.get(&dep).unwrap().status["readyReplicas"], 3);
    assert!(store.contains(&pod_key("default", "web-1")));
}

#[test]
fn scale_down_deletes_surplus() {
    let mut store = ClusterStore::new();
    store.apply(deployment("web", 3, "1.0")).unwrap();
    let (mut m, _) = run_deployments(&mut store);
    store.apply(deployment("web", 1, "1.0")).unwrap();
    m.run_to_quiescence(&mut store, 1, 10).unwrap();
    let names: Vec<String> = owned_pods(&store, &deployment_key("default", "web"))
        .iter()
        .map(|p| p.key.name.clone())
        .collect();
    assert_eq!(names, vec!["web-0"]);
}

#[test]
fn rolling_update_replaces_one_pod_per_pass() {
    let mut store = ClusterStore::new();
    store.apply(deployment("web", 2, "1.0")).unwrap();
    let (mut m, _) = run_deployments(&mut store);
    let dep = deployment_key("default", "web");
    store.apply(deployment("web", 2, "2.0")).unwrap();

    m.run_pass(&mut store, 1);
    let mut after_one = pod_versions(&store, &dep);
    after_one.sort();
    assert_eq!(after_one, vec!["1.0", "2.0"]);
    m.run_pass(&mut store, 1);
    assert_eq!(pod_versions(&store, &dep), vec!["2.0", "2.0"]);
    assert_eq!(store.get(&dep).unwrap().status["phase"], "Available");
}

#[test]
fn deployment_reconcile_is_a_fixed_point() {
    let mut store = ClusterStore::new();
    store.apply(deployment("web", 2, "1.0")).unwrap();
    run_deployments(&mut store);
    let mut c = DeploymentController;
    let out = c.reconcile(&mut store, &deployment_key("default", "web"), 5);
    assert_eq!(out, ReconcileOutcome::done(0));
}

fn installed(version: &str) -> (ClusterStore, OperatorHost) {
    let mut store = ClusterStore::new();
    apply_bundle(&mut store, &build_operator_bundle(version));
    let mut host = OperatorHost::new(&store, 0);
    host.run_to_quiescence(&mut store, 0).unwrap();
    (store, host)
}

#[test]
fn operator_starts_from_its_bundle() {
    let (store, host) = installed("1.0");
    assert!(store.has_crd(NGINX_GROUP, NGINX_KIND));
    let id = host.operator().unwrap();
    assert_eq!(id.version, "1.0");
    assert_eq!(id.pod, pod_key(OPERATOR_NAMESPACE, "nginx-operator-0"));
    assert_eq!(
        host.manager().names(),
        vec![DeploymentController::NAME, NginxReconciler::NAME]
    );
}

#[test]
fn nginx_instance_examples() {
    let (mut store, mut host) = installed("1.0");
    let cr = nginx_key("saran-nginx", "example-nginx");
    store
        .apply(nginx_instance("saran-nginx", "example-nginx", 1, true))
        .unwrap();
    host.run_to_quiescence(&mut store, 1).unwrap();

    let dep = deployment_key("saran-nginx", "example-nginx");
    let svc = ResourceKey::new("v1", "Service", "saran-nginx", "example-nginx");
    let route = ResourceKey::new(
        "route.openshift.io/v1",
        "Route",
        "saran-nginx",
        "example-nginx",
    );
    for k in [&dep, &svc, &route] {
        assert!(store.get(k).unwrap().is_owned_by(&cr), "{k} owned by CR");
    }
    assert_eq!(store.get(&dep).unwrap().spec["replicas"], 1);
    assert_eq!(owned_pods(&store, &dep).len(), 1);
    let status = &store.get(&cr).unwrap().status;
    assert_eq!(
        status,
        &json!({"readyReplicas": 1, "phase": "Running", "servedVersion": "1.0"})
    );

    let before_dep = store.get(&dep).unwrap().resource_version;
    store
        .apply(nginx_instance("saran-nginx", "example-nginx", 1, false))
        .unwrap();
    host.run_to_quiescence(&mut store, 2).unwrap();
    assert!(!store.contains(&route));
    assert!(store.contains(&svc));
    assert_eq!(store.get(&dep).unwrap().resource_version, before_dep);

    let mut r = NginxReconciler::new("1.0");
    assert_eq!(r.reconcile(&mut store, &cr, 3), ReconcileOutcome::done(0));
}

#[test]
fn invalid_spec_is_an_error() {
    let (mut store, _) = installed("1.0");
    let mut bad = nginx_instance("default", "x", 1, false);
    bad.spec = json!({"replicaCount": "many"});
    store.apply(bad).unwrap();
    let out = NginxReconciler::new("1.0").reconcile(&mut store, &nginx_key("default", "x"), 0);
    assert!(matches!(out.result, ReconcileResult::Error(_)));
}

#[test]
fn operator_bundle_is_deterministic_and_version_stamped() {
    let one = build_operator_bundle("1.0");
    assert_eq!(one, build_operator_bundle("1.0"));
    let two = String::from_utf8(build_operator_bundle("2.0")).unwrap();
    assert_eq!(two.replace("2.0", "1.0").into_bytes(), one);

    let b = Bundle::parse(&one).unwrap();
    let kinds: Vec<&str> = b
        .documents()
        .iter()
        .map(|d| d["kind"].as_str().unwrap())
        .collect();
    assert_eq!(
        kinds,
        vec![
            "CustomResourceDefinition",
            "ServiceAccount",
            "Role",
            "RoleBinding",
            "Deployment",
            "Service"
        ]
    );
    let dep = &b.documents()[4];
    assert_eq!(dep["metadata"]["annotations"]["version"], "1.0");
    assert_eq!(
        dep["metadata"]["labels"]["razeedash/watch-resource"],
        "lite"
    );
}

#[test]
fn upgrade_propagates_to_every_instance() {
    let (mut store, mut host) = installed("1.0");
    for i in 0..3 {
        store
            .apply(nginx_instance("apps", &format!("n{i}"), 2, i % 2 == 0))
            .unwrap();
    }
    host.run_to_quiescence(&mut store, 1).unwrap();
    apply_bundle(&mut store, &build_operator_bundle("2.0"));
    let passes = host.run_to_quiescence(&mut store, 2).unwrap();
    assert!(passes > 0);
    assert_eq!(host.operator().unwrap().version, "2.0");
    for i in 0..3 {
        let cr = nginx_key("apps", &format!("n{i}"));
        assert_eq!(store.get(&cr).unwrap().status["servedVersion"], "2.0");
        let pods = pod_versions(&store, &deployment_key("apps", &format!("n{i}")));
        assert_eq!(pods, vec!["2.0", "2.0"]);
    }
}

#[test]
fn no_instances_upgrade_touches_only_the_operator() {
    let (mut store, mut host) = installed("1.0");
    apply_bundle(&mut store, &build_operator_bundle("2.0"));
    host.run_to_quiescence(&mut store, 1).unwrap();
    let deployments: Vec<String> = store
        .objects()
        .filter(|o| o.key.kind == "Deployment")
        .map(|o| o.key.name.clone())
        .collect();
    assert_eq!(deployments, vec![OPERATOR_NAME]);
}

fn owned_closure(store: &ClusterStore, root: &ResourceKey) -> BTreeSet<ResourceKey> {
    let mut found = BTreeSet::from([root.clone()]);
    loop {
        let more: Vec<ResourceKey> = store
            .objects()
            .filter(|o| !found.contains(&o.key) && o.owner_refs.iter().any(|r| found.contains(r)))
            .map(|o| o.key.clone())
            .collect();
        if more.is_empty() {
            found.remove(root);
            return found;
        }
        found.extend(more);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nginx_fixed_point_and_cascade(specs in prop::collection::vec((0u64..4, any::<bool>()), 1..5)) {
        let (mut store, mut host) = installed("1.0");
        for (i, (n, ingress)) in specs.iter().enumerate() {
            store.apply(nginx_instance("apps", &format!("n{i}"), *n, *ingress)).unwrap();
        }
        host.run_to_quiescence(&mut store, 1).unwrap();
        let mut r = NginxReconciler::new("1.0");
        let mut d = DeploymentController;
        for (i, (n, _)) in specs.iter().enumerate() {
            let cr = nginx_key("apps", &format!("n{i}"));
            prop_assert_eq!(r.reconcile(&mut store, &cr, 1), ReconcileOutcome::done(0));
            prop_assert_eq!(d.reconcile(&mut store, &deployment_key("apps", &format!("n{i}")), 1), ReconcileOutcome::done(0));
            prop_assert_eq!(&store.get(&cr).unwrap().status["readyReplicas"], &json!(n));
            for child in owned_closure(&store, &cr) {
                let o = store.get(&child).unwrap();
                prop_assert!(o.owner_refs.len() == 1);
            }
        }
        for i in 0..specs.len() {
            let cr = nginx_key("apps", &format!("n{i}"));
            store.delete(&cr).unwrap();
            prop_assert!(owned_closure(&store, &cr).is_empty());
            prop_assert!(!store.objects().any(|o| o.owner_refs.contains(&cr)));
        }
        let seq = store.sequence();
        host.run_to_quiescence(&mut store, 2).unwrap();
        prop_assert_eq!(store.sequence(), seq);
    }

    #[test]
    fn self_healing_within_discrepancies_plus_one(
        replicas in 1u64..5,
        damage in prop::collection::vec((0usize..3, 0u64..5), 1..6),
    ) {
        let (mut store, mut host) = installed("1.0");
        let cr = nginx_key("apps", "web");
        store.apply(nginx_instance("apps", "web", replicas, true)).unwrap();
        host.run_to_quiescence(&mut store, 1).unwrap();
        let healthy: Vec<ResourceObject> = {
            let mut v: Vec<ResourceObject> = owned_closure(&store, &cr).into_iter().map(|k| store.get(&k).unwrap().clone()).collect();
            v.sort_by(|a, b| a.key.cmp(&b.key));
            v
        };

        let mut discrepancies = 0;
        for (what, n) in damage {
            let dep = deployment_key("apps", "web");
            match what {
                0 => {
                    let pod = pod_key("apps", &format!("web-{}", n % replicas));
                    if store.contains(&pod) { store.delete(&pod).unwrap(); discrepancies += 1; }
                }
                1 => {
                    let svc = ResourceKey::new("v1", "Service", "apps", "web");
                    if let Some(mut s) = store.find(&svc).cloned() {
                        s.spec = json!({"mutated": n});
                        store.apply(s).unwrap();
                        discrepancies += 1;
                    }
                }
                _ => {
                    if let Some(mut d) = store.find(&dep).cloned() {
                        d.spec["replicas"] = json!(n);
                        store.apply(d).unwrap();
                        discrepancies += 1;
                    }
                }
            }
        }
        let mut passes = 0;
        loop {
            let mut now: Vec<ResourceObject> = owned_closure(&store, &cr).into_iter().map(|k| store.get(&k).unwrap().clone()).collect();
            now.sort_by(|a, b| a.key.cmp(&b.key));
            let same = now.len() == healthy.len()
                && now.iter().zip(&healthy).all(|(a, b)| a.key == b.key && a.spec == b.spec && a.labels == b.labels);
            if same { break; }
            prop_assert!(passes <= discrepancies + 1, "not healed after {} passes", passes);
            host.run_pass(&mut store, 2);
            passes += 1;
        }
        prop_assert!(passes <= discrepancies + 1);
    }
}
