use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::auth::Credentials;
use crate::bundle::Bundle;
use crate::clock::ManualClock;
use crate::cluster::{ClusterStore, EventType, ResourceObject, WatchEvent};
use crate::control_plane::{ControlPlane, MemoryArtifactStore, ReportLevel, ReportTrigger, TagSet};
use crate::operator::build_operator_bundle;

fn tags(ts: &[&str]) -> TagSet {
    ts.iter().map(|s| s.to_string()).collect()
}

fn admin() -> Credentials {
    Credentials::new("org", "key", "admin")
}

struct Fixture {
    cp: Arc<ControlPlane>,
    clock: Arc<ManualClock>,
    client: InProcessClient,
}

fn fixture() -> Fixture {
    let clock = Arc::new(ManualClock::new(0));
    let cp = Arc::new(ControlPlane::new(
        admin(),
        Arc::new(MemoryArtifactStore::new()),
        clock.clone(),
    ));
    cp.create_channel("nginx-operator").unwrap();
    cp.upload_version(
        "nginx-operator",
        "1.0",
        &build_operator_bundle("1.0"),
        &admin(),
    )
    .unwrap();
    cp.upload_version(
        "nginx-operator",
        "2.0",
        &build_operator_bundle("2.0"),
        &admin(),
    )
    .unwrap();
    cp.create_subscription("nginx-test", "nginx-operator", "1.0", tags(&["demo"]))
        .unwrap();
    let client = InProcessClient::new(cp.clone(), "org");
    Fixture { cp, clock, client }
}

fn agent(id: &str, t: &[&str]) -> Agent {
    Agent::new(AgentConfig::new(id, "org", tags(t)))
}

fn only_rr(store: &ClusterStore) -> ResourceKey {
    let rrs = managed_remote_resources(store);
    assert_eq!(rrs.len(), 1);
    rrs[0].key.clone()
}

#[test]
fn first_tick_syncs_applies_and_scans() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    let s = a.tick(&f.client, &mut store, 0);
    assert!(s.synced && s.scanned, "{s:?}");
    assert_eq!(
        s.sync,
        SyncResult {
            created: 1,
            updated: 0,
            pruned: 0
        }
    );
    assert!(s.errors.is_empty(), "{:?}", s.errors);

    let rr = only_rr(&store);
    let st = RemoteResourceStatus::of(store.get(&rr).unwrap());
    assert_eq!(st.phase, RemotePhase::Applied);
    let hash = Bundle::parse(&build_operator_bundle("1.0"))
        .unwrap()
        .content_hash();
    assert_eq!(st.applied_hash, Some(hash));
    let kinds: BTreeSet<String> = st.applied_keys.iter().map(|k| k.kind.clone()).collect();
    for k in [
        "CustomResourceDefinition",
        "ServiceAccount",
        "Role",
        "RoleBinding",
        "Deployment",
        "Service",
    ] {
        assert!(kinds.contains(k), "{k} applied");
    }
    assert!(store.has_crd("example.com", "Nginx"));
    let dep = store
        .get(&ResourceKey::new(
            "apps/v1",
            "Deployment",
            "nginx-operator",
            "nginx-operator",
        ))
        .unwrap();
    assert_eq!(
        dep.annotations[SUB_ID_ANNOTATION],
        f.cp.list_subscriptions()[0].id
    );
    assert!(dep.is_owned_by(&rr));
    assert_eq!(f.cp.query_inventory().len(), 1);
}

#[test]
fn reconcile_twice_is_idempotent() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    a.tick(&f.client, &mut store, 0);
    let rr = only_rr(&store);
    let seq = store.sequence();
    let r = a.reconcile(&f.client, &mut store, &rr, 1).unwrap();
    assert_eq!(r.mutations(), 0);
    assert_eq!(store.sequence(), seq);
}

#[test]
fn ticks_follow_interval_boundaries() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    let syncs: usize = [0, 15, 30]
        .iter()
        .map(|t| usize::from(a.tick(&f.client, &mut store, *t).synced))
        .sum();
    assert_eq!(syncs, 2);
    assert!(!a.tick(&f.client, &mut store, 59).synced);
    assert_eq!(a.next_wake(), 60);
}

#[test]
fn flip_updates_and_prunes_renamed_documents() {
    let f = fixture();
    let one = b"apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: old\ndata:\n  a: '1'\n---\napiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: keep\ndata:\n  a: '1'\n";
    let two = b"apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: new\ndata:\n  a: '2'\n---\napiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: keep\ndata:\n  a: '2'\n";
    f.cp.create_channel("cfg").unwrap();
    f.cp.upload_version("cfg", "1", one, &admin()).unwrap();
    f.cp.upload_version("cfg", "2", two, &admin()).unwrap();
    let sub =
        f.cp.create_subscription("cfg-sub", "cfg", "1", tags(&["cfg"]))
            .unwrap();

    let mut store = ClusterStore::new();
    let untouched = ResourceObject::new(
        ResourceKey::new("v1", "ConfigMap", "default", "mine"),
        json!({}),
    );
    store.apply(untouched.clone()).unwrap();
    let mut a = agent("c1", &["cfg"]);
    a.tick(&f.client, &mut store, 0);
    let cm = |n: &str| ResourceKey::new("v1", "ConfigMap", "default", n);
    assert!(store.contains(&cm("old")) && store.contains(&cm("keep")));

    f.cp.set_subscription_version(&sub.id, "2").unwrap();
    let s = a.tick(&f.client, &mut store, 30);
    assert_eq!(s.sync.updated, 1);
    assert!(!store.contains(&cm("old")));
    assert!(store.contains(&cm("new")));
    assert_eq!(store.get(&cm("keep")).unwrap().spec["data"]["a"], "2");
    assert!(store.contains(&untouched.key));
}

#[test]
fn vanished_subscription_prunes_everything_it_applied() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    a.tick(&f.client, &mut store, 0);
    let applied = RemoteResourceStatus::of(store.get(&only_rr(&store)).unwrap()).applied_keys;
    f.cp.delete_subscription("nginx-test").unwrap();
    let s = a.tick(&f.client, &mut store, 30);
    assert_eq!(s.sync.pruned, 1);
    assert!(managed_remote_resources(&store).is_empty());
    for k in applied {
        assert!(!store.contains(&k), "{k} pruned");
    }
}

#[test]
fn outage_is_fail_static() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    a.tick(&f.client, &mut store, 0);
    let before = store.snapshot();
    let seq = store.sequence();
    let mut down = FaultyClient::new(&f.client);
    down.offline = true;
    let s = a.tick(&down, &mut store, 60);
    assert_eq!(s.sync, SyncResult::default());
    assert!(s.errors.iter().any(|e| e.contains("unreachable")));
    assert!(a.last_error().is_some());
    assert_eq!(store.sequence(), seq);
    assert_eq!(format!("{:?}", store.snapshot()), format!("{before:?}"));
    assert!(a.keeper().outbox_len() > 0, "reports buffered");

    let s = a.tick(&f.client, &mut store, 90);
    assert!(s.errors.is_empty());
    assert_eq!(a.keeper().outbox_len(), 0);
    assert!(a.last_error().is_none());
}

#[test]
fn unreachable_artifacts_fail_and_retry() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    let mut broken = FaultyClient::new(&f.client);
    broken.artifacts_down = true;
    a.tick(&broken, &mut store, 0);
    let rr = only_rr(&store);
    let st = RemoteResourceStatus::of(store.get(&rr).unwrap());
    assert_eq!(st.phase, RemotePhase::Failed);
    assert!(st.last_error.unwrap().contains("fetch"));
    assert!(st.applied_keys.is_empty());
    assert_eq!(a.next_wake(), RETRY_BASE);

    let s = a.tick(&broken, &mut store, 5);
    assert_eq!(s.reconciled, 1);
    assert_eq!(a.next_wake(), 15);
    a.tick(&f.client, &mut store, 15);
    assert_eq!(
        RemoteResourceStatus::of(store.get(&rr).unwrap()).phase,
        RemotePhase::Applied
    );
}

struct Tampered<'a>(&'a dyn ControlPlaneClient);

impl ControlPlaneClient for Tampered<'_> {
    fn register(&self, c: &str, t: &TagSet) -> Result<(), ClientError> {
        self.0.register(c, t)
    }
    fn poll(
        &self,
        c: &str,
        t: &TagSet,
    ) -> Result<Vec<crate::control_plane::SubscriptionHandout>, ClientError> {
        self.0.poll(c, t)
    }
    fn fetch(&self, _: &str) -> Result<Vec<u8>, ClientError> {
        Ok(build_operator_bundle("evil"))
    }
    fn send_reports(&self, b: &ReportBatch) -> Result<usize, ClientError> {
        self.0.send_reports(b)
    }
}

#[test]
fn hash_mismatch_is_rejected() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    a.tick(&Tampered(&f.client), &mut store, 0);
    let st = RemoteResourceStatus::of(store.get(&only_rr(&store)).unwrap());
    assert_eq!(st.phase, RemotePhase::Failed);
    assert!(st.last_error.unwrap().contains("hash mismatch"));
    assert_eq!(
        store
            .objects()
            .filter(|o| o.key.kind == "Deployment")
            .count(),
        0
    );
}

#[test]
fn smaller_sub_id_wins_conflicts() {
    let f = fixture();
    f.cp.create_subscription("dup", "nginx-operator", "1.0", tags(&["demo"]))
        .unwrap();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    a.tick(&f.client, &mut store, 0);
    let mut ids: Vec<String> =
        f.cp.list_subscriptions()
            .into_iter()
            .map(|s| s.id)
            .collect();
    ids.sort();
    let winner = RemoteResourceStatus::of(store.get(&rr_key(&ids[0])).unwrap());
    let loser = RemoteResourceStatus::of(store.get(&rr_key(&ids[1])).unwrap());
    assert_eq!(winner.phase, RemotePhase::Applied);
    assert_eq!(loser.phase, RemotePhase::Failed);
    assert!(loser.last_error.unwrap().starts_with("Conflict"));
    let dep = store
        .get(&ResourceKey::new(
            "apps/v1",
            "Deployment",
            "nginx-operator",
            "nginx-operator",
        ))
        .unwrap();
    assert_eq!(dep.annotations[SUB_ID_ANNOTATION], ids[0]);
}

#[test]
fn empty_tags_opt_out() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &[]);
    let s = a.tick(&f.client, &mut store, 0);
    assert!(s.errors.is_empty());
    assert!(managed_remote_resources(&store).is_empty());
}

#[test]
fn reports_reach_the_control_plane() {
    let f = fixture();
    let mut store = ClusterStore::new();
    let mut a = agent("c1", &["demo"]);
    a.tick(&f.client, &mut store, 0);
    let rs = f.cp.query_resources("c1", &Default::default()).unwrap();
    assert_eq!(rs.len(), 1);
    assert_eq!(rs[0].resource_key.name, "nginx-operator");
    assert_eq!(rs[0].level, ReportLevel::Lite);
    assert!(rs[0].payload.get("spec").is_none());
    f.clock.set(1);
}

fn labelled(name: &str, level: Option<&str>, v: i64) -> ResourceObject {
    let mut o = ResourceObject::new(
        ResourceKey::new("apps/v1", "Deployment", "default", name),
        json!({"replicas": v}),
    );
    if let Some(l) = level {
        o = o.with_label(WATCH_LABEL, l);
    }
    o
}

#[test]
fn scan_payload_levels() {
    let mut store = ClusterStore::new();
    store.apply(labelled("a", Some("lite"), 1)).unwrap();
    store.apply(labelled("b", Some("detail"), 1)).unwrap();
    store.apply(labelled("c", Some("debug"), 1)).unwrap();
    store.apply(labelled("d", None, 1)).unwrap();
    store.apply(labelled("e", Some("verbose"), 1)).unwrap();
    let batch = scan("c1", &store, 7);
    let levels: Vec<(String, ReportLevel)> = batch
        .iter()
        .map(|r| (r.resource_key.name.clone(), r.level))
        .collect();
    assert_eq!(
        levels,
        vec![
            ("a".into(), ReportLevel::Lite),
            ("b".into(), ReportLevel::Detail),
            ("c".into(), ReportLevel::Debug)
        ]
    );
    assert!(batch[0].payload.get("spec").is_none());
    assert_eq!(batch[1].payload["spec"]["replicas"], 1);
    let debug = ResourceObject::from_document(&batch[2].payload, "default").unwrap();
    assert_eq!(&debug, store.get(&batch[2].resource_key).unwrap());
    for r in &batch {
        crate::control_plane::validate_report(r).unwrap();
    }
}

#[test]
fn unchanged_store_scans_identically() {
    let mut store = ClusterStore::new();
    store.apply(labelled("a", Some("lite"), 1)).unwrap();
    let a: Vec<_> = scan("c1", &store, 1)
        .into_iter()
        .map(|r| r.payload)
        .collect();
    let b: Vec<_> = scan("c1", &store, 2)
        .into_iter()
        .map(|r| r.payload)
        .collect();
    assert_eq!(
        crate::hash::to_canonical_string(&a),
        crate::hash::to_canonical_string(&b)
    );
}

#[test]
fn event_burst_is_debounced() {
    let mut store = ClusterStore::new();
    let mut k = WatchKeeper::new("c1", 5, 100);
    let mut reports = 0;
    for v in 0..10 {
        store.apply(labelled("a", Some("lite"), v)).unwrap();
        let ev = store
            .watch(&crate::cluster::WatchFilter::all(), store.sequence() - 1)
            .next()
            .unwrap()
            .clone();
        if let Some(r) = k.on_event(&ev, 100 + v as u64 / 3) {
            assert_eq!(r.trigger, ReportTrigger::Event);
            reports += 1;
        }
    }
    assert_eq!(reports, 1);
    let ev = WatchEvent {
        event_type: EventType::Modified,
        object: labelled("a", Some("lite"), 99),
        sequence: 99,
    };
    assert!(k.on_event(&ev, 105).is_some());
    let plain = WatchEvent {
        event_type: EventType::Modified,
        object: labelled("z", None, 1),
        sequence: 100,
    };
    assert!(k.on_event(&plain, 200).is_none());
}

#[test]
fn outbox_is_bounded() {
    let mut k = WatchKeeper::new("c1", 5, 3);
    let store = {
        let mut s = ClusterStore::new();
        for i in 0..5 {
            s.apply(labelled(&format!("r{i}"), Some("lite"), 1))
                .unwrap();
        }
        s
    };
    k.enqueue(scan("c1", &store, 0));
    assert_eq!(k.outbox_len(), 3);
    assert_eq!(k.dropped(), 2);
    let names: Vec<String> = k
        .take_outbox()
        .into_iter()
        .map(|r| r.resource_key.name)
        .collect();
    assert_eq!(names, vec!["r2", "r3", "r4"]);
}

#[test]
fn config_loading_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("agent.yaml");
    std::fs::write(
        &p,
        "cluster_id: c1\norg_key: file\ntags: [demo]\npoll_interval: 10\n",
    )
    .unwrap();
    let mut c = AgentConfig::load(&p).unwrap();
    assert_eq!(
        (c.poll_interval, c.report_interval),
        (10, DEFAULT_REPORT_INTERVAL)
    );
    c.apply_env(|k| (k == "RAZORCD_ORG_KEY").then(|| "env".to_string()));
    assert_eq!(c.org_key, "env");
    c.validate().unwrap();
    c.poll_interval = 0;
    assert!(c.validate().is_err());
    assert!(matches!(
        AgentConfig::load(&dir.path().join("missing")),
        Err(ConfigError::Io { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sync_mirrors_handout_diffs(rounds in prop::collection::vec(prop::collection::btree_set(0usize..5, 0..5), 1..6)) {
        let f = fixture();
        let mut store = ClusterStore::new();
        let mut a = agent("c1", &["t"]);
        f.client.register("c1", &tags(&["t"])).unwrap();
        let mut prev: BTreeSet<usize> = BTreeSet::new();
        let mut ids: BTreeMap<usize, String> = BTreeMap::new();
        for live in rounds {
            for gone in prev.difference(&live) {
                f.cp.delete_subscription(&ids[gone]).unwrap();
            }
            for new in live.difference(&prev) {
                let s = f.cp.create_subscription(&format!("s{new}-{}", ids.len()), "nginx-operator", "1.0", tags(&["t"])).unwrap();
                ids.insert(*new, s.id);
            }
            let r = a.sync_subscriptions(&f.client, &mut store).unwrap();
            prop_assert_eq!(r.created, live.difference(&prev).count());
            prop_assert_eq!(r.pruned, prev.difference(&live).count());
            let have: BTreeSet<ResourceKey> = managed_remote_resources(&store).iter().map(|o| o.key.clone()).collect();
            let want: BTreeSet<ResourceKey> = live.iter().map(|i| rr_key(&ids[i])).collect();
            prop_assert_eq!(have, want);
            prev = live;
        }
    }
}
