//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use razorcd::agent::{report_for, scan, Agent, AgentConfig, InProcessClient, WATCH_LABEL};
use razorcd::auth::Credentials;
use razorcd::bundle::Bundle;
use razorcd::clock::ManualClock;
use razorcd::cluster::{
    ClusterStore, EventType, ListParams, ResourceKey, ResourceObject, WatchFilter, CRD_KIND,
};
use razorcd::control_plane::{
    handle, ControlPlane, MemoryArtifactStore, ReportTrigger, TagSet, ADMIN_API_KEY_HEADER,
    ADMIN_USER_HEADER, ORG_KEY_HEADER, RESOURCE_NAME_HEADER,
};
use razorcd::http::HttpRequest;
use razorcd::operator::{
    build_operator_bundle, nginx_instance, nginx_key, OperatorHost, NGINX_GROUP, NGINX_KIND,
    OPERATOR_NAME, OPERATOR_NAMESPACE,
};
use razorcd::sim::{
    compare_models, run_pull_rollout, ExecMode, PullSim, SimConfig, DEFAULT_SWEEP, UPGRADE_VERSION,
};
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn tags(t: &[&str]) -> TagSet {
    t.iter().map(|s| s.to_string()).collect()
}

/// Waves of at most `k` jobs, counted one at a time.
fn push_oracle(n: usize, k: usize, c: u64) -> u64 {
    let mut remaining = n;
    let mut t = 0;
    while remaining > 0 {
        remaining -= remaining.min(k);
        t += c;
    }
    t
}

/// Every object whose owner chain reaches `root`, found by repeated scans.
fn owned_closure(store: &ClusterStore, root: &ResourceKey) -> BTreeSet<ResourceKey> {
    let mut set: BTreeSet<ResourceKey> = BTreeSet::new();
    loop {
        let before = set.len();
        for o in store.objects() {
            if o.owner_refs.iter().any(|r| r == root || set.contains(r)) {
                set.insert(o.key.clone());
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

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

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let cfg = SimConfig::default();
    let table = compare_models(&cfg, &DEFAULT_SWEEP).map_err(|e| e.to_string())?;
    let pulls: Vec<u64> = table
        .rows
        .iter()
        .map(|r| {
            r.pull_time
                .ok_or(format!("pull N={} did not converge", r.n))
        })
        .collect::<Result<_, _>>()?;
    let spread = pulls.iter().max().unwrap() - pulls.iter().min().unwrap();
    ensure(
        spread <= cfg.poll_interval,
        format!("pull spread {spread} > poll {}", cfg.poll_interval),
    )?;
    for r in &table.rows {
        let want = push_oracle(r.n, cfg.push_parallelism, cfg.per_cluster_push_cost);
        ensure(
            r.push_time == Some(want),
            format!("push N={} got {:?} want {want}", r.n, r.push_time),
        )?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("sweep took {secs:.1}s"))?;
    let cols: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "N={} pull={} push={}",
                r.n,
                r.pull_time.unwrap(),
                r.push_time.unwrap()
            )
        })
        .collect();
    Ok(format!(
        "{}; spread {spread} <= {}; {secs:.1}s",
        cols.join(", "),
        cfg.poll_interval
    ))
}

fn criterion_2() -> Outcome {
    let creds = Credentials::new("org", "key", "admin");
    let cp = Arc::new(ControlPlane::new(
        creds,
        Arc::new(MemoryArtifactStore::new()),
        Arc::new(ManualClock::new(0)),
    ));
    let admin = |r: HttpRequest| {
        r.with_header(ADMIN_API_KEY_HEADER, "key")
            .with_header(ADMIN_USER_HEADER, "admin")
    };
    let resp = handle(
        &cp,
        &admin(HttpRequest::post("/api/v1/channels").with_json(&json!({"name": "nginx-operator"}))),
    );
    ensure(
        resp.status == 201,
        format!("create channel: {}", resp.body_text()),
    )?;
    let upload = admin(HttpRequest::post("/api/v1/channels/nginx-operator/version"))
        .with_header(ORG_KEY_HEADER, "org")
        .with_header(RESOURCE_NAME_HEADER, "1.0")
        .with_header("content-type", "text/yaml")
        .with_body(build_operator_bundle("1.0"));
    let resp = handle(&cp, &upload);
    let receipt: Value = resp.body_json().map_err(|e| e.to_string())?;
    let top: Vec<&String> = receipt
        .as_object()
        .ok_or("receipt is not an object")?
        .keys()
        .collect();
    ensure(
        top == ["status", "version"],
        format!("receipt keys {top:?}"),
    )?;
    ensure(receipt["status"] == "success", "status != success")?;
    let v = receipt["version"]
        .as_object()
        .ok_or("version is not an object")?;
    let vkeys: Vec<&String> = v.keys().collect();
    ensure(
        vkeys == ["location", "name", "uid"],
        format!("version keys {vkeys:?}"),
    )?;
    ensure(
        v.values().all(Value::is_string) && receipt["version"]["name"] == "1.0",
        "version fields",
    )?;
    let sub = json!({"name": "nginx-test", "channel": "nginx-operator", "version": "1.0", "tags": ["demo"]});
    ensure(
        handle(
            &cp,
            &admin(HttpRequest::post("/api/v1/subscriptions").with_json(&sub)),
        )
        .status
            == 201,
        "subscribe",
    )?;

    let client = InProcessClient::new(cp.clone(), "org");
    let mut holders = Vec::new();
    for (i, t) in ["demo", "demo", "demo", "other"].iter().enumerate() {
        let mut store = ClusterStore::new();
        let mut agent = Agent::new(AgentConfig::new(format!("c{i}"), "org", tags(&[t])));
        let mut host = OperatorHost::new(&store, 0);
        let s = agent.tick(&client, &mut store, 0);
        ensure(s.errors.is_empty(), format!("c{i}: {:?}", s.errors))?;
        host.run_to_quiescence(&mut store, 0)
            .map_err(|e| e.to_string())?;
        let deployed = store.contains(&ResourceKey::new(
            "apps/v1",
            "Deployment",
            OPERATOR_NAMESPACE,
            OPERATOR_NAME,
        )) && store.has_crd(NGINX_GROUP, NGINX_KIND);
        let workload = store
            .objects()
            .filter(|o| o.key.kind != "RemoteResource")
            .count();
        holders.push((deployed, workload));
    }
    let with_operator = holders.iter().filter(|h| h.0).count();
    ensure(
        with_operator == 3 && holders[..3].iter().all(|h| h.0),
        format!("{with_operator} clusters hold the operator"),
    )?;
    ensure(
        holders[3] == (false, 0),
        format!("other-tagged cluster holds {} objects", holders[3].1),
    )?;
    Ok(
        "3 of 4 clusters hold operator and CRD; receipt {status, version{location, name, uid}}"
            .into(),
    )
}

fn operator_cluster(
    replicas: u64,
    ingress: bool,
) -> Result<(ClusterStore, OperatorHost, ResourceKey), String> {
    let mut store = ClusterStore::new();
    apply_bundle(&mut store, &build_operator_bundle("1.0"));
    let mut host = OperatorHost::new(&store, 0);
    host.run_to_quiescence(&mut store, 0)
        .map_err(|e| e.to_string())?;
    store
        .apply(nginx_instance("demo", "example-nginx", replicas, ingress))
        .map_err(|e| e.to_string())?;
    host.run_to_quiescence(&mut store, 1)
        .map_err(|e| e.to_string())?;
    Ok((store, host, nginx_key("demo", "example-nginx")))
}

fn criterion_3() -> Outcome {
    let (mut store, mut host, cr) = operator_cluster(1, true)?;
    let owned = owned_closure(&store, &cr);
    let count = |kind: &str| owned.iter().filter(|k| k.kind == kind).count();
    for kind in ["Deployment", "Service", "Route", "Pod"] {
        ensure(
            count(kind) == 1,
            format!("{} {kind} owned by the CR", count(kind)),
        )?;
    }
    let pod = owned.iter().find(|k| k.kind == "Pod").unwrap();
    let dep = &store.get(pod).map_err(|e| e.to_string())?.owner_refs;
    ensure(
        dep.len() == 1 && dep[0].kind == "Deployment",
        "pod is not owned by the deployment",
    )?;
    store.delete(&cr).map_err(|e| e.to_string())?;
    host.run_to_quiescence(&mut store, 2)
        .map_err(|e| e.to_string())?;
    let left = owned_closure(&store, &cr);
    let survivors = owned.iter().filter(|k| store.contains(k)).count();
    ensure(
        left.is_empty() && survivors == 0,
        format!("{} owned objects remain", left.len() + survivors),
    )?;
    Ok(format!(
        "{} owned objects created, 0 remain after delete",
        owned.len()
    ))
}

fn criterion_4() -> Outcome {
    let (mut store, mut host, _) = operator_cluster(3, false)?;
    let dep_key = store.list(&ListParams::kind("Deployment").in_namespace("demo"))[0]
        .key
        .clone();
    let ready = |s: &ClusterStore| {
        s.get(&dep_key)
            .ok()
            .and_then(|d| d.status["readyReplicas"].as_u64())
    };
    let running = |s: &ClusterStore| {
        s.list(&ListParams::kind("Pod").in_namespace("demo"))
            .iter()
            .filter(|p| p.phase() == Some("Running"))
            .count()
    };
    ensure(ready(&store) == Some(3), "not ready before the kill")?;
    let victim = store.list(&ListParams::kind("Pod").in_namespace("demo"))[1]
        .key
        .clone();
    store.delete(&victim).map_err(|e| e.to_string())?;
    let mut passes = 0;
    while !(ready(&store) == Some(3) && running(&store) == 3) {
        if passes == 3 {
            return Err(format!(
                "readyReplicas {:?}, {} running after 3 passes",
                ready(&store),
                running(&store)
            ));
        }
        host.run_pass(&mut store, 5);
        passes += 1;
    }
    Ok(format!(
        "readyReplicas back to 3 after {passes} reconcile passes"
    ))
}

fn criterion_5() -> Outcome {
    let cfg = SimConfig {
        num_clusters: 10,
        instances_per_cluster: 2,
        ..SimConfig::default()
    };
    let flip = cfg.flip_at.unwrap();
    let poll = cfg.poll_interval;
    let mut sim = PullSim::new(cfg).map_err(|e| e.to_string())?;
    sim.run_until(flip + 2 * poll).map_err(|e| e.to_string())?;
    for c in sim.clusters() {
        ensure(
            c.operator_version() == Some(UPGRADE_VERSION),
            format!("{} operator at {:?}", c.id, c.operator_version()),
        )?;
        let served = c.served_versions();
        ensure(
            served.len() == 2 && served.iter().all(|v| v.as_deref() == Some(UPGRADE_VERSION)),
            format!("{} servedVersion {served:?}", c.id),
        )?;
    }
    let admin_times: Vec<u64> = sim
        .trace()
        .iter()
        .filter(|l| l.contains(" admin-cluster "))
        .filter_map(|l| l.trim_start_matches("t=").split(' ').next()?.parse().ok())
        .collect();
    ensure(
        !admin_times.is_empty(),
        "no cluster-side admin actions traced before the flip",
    )?;
    let admin_after: Vec<&u64> = admin_times.iter().filter(|t| **t >= flip).collect();
    ensure(
        admin_after.is_empty(),
        format!(
            "{} cluster-side admin actions after the flip",
            admin_after.len()
        ),
    )?;
    Ok(format!(
        "10 clusters at 2.0 by t=flip+{}; 0 cluster-side admin actions",
        2 * poll
    ))
}

fn random_object(rng: &mut ChaCha8Rng, i: usize) -> ResourceObject {
    let kind = ["ConfigMap", "Secret", "Service"].choose(rng).unwrap();
    let key = ResourceKey::new(
        "v1",
        *kind,
        *["default", "apps"].choose(rng).unwrap(),
        format!("r{i}"),
    );
    let spec = json!({"n": rng.gen_range(0..1000), "flag": rng.gen_bool(0.5)});
    let mut obj = ResourceObject::new(key, spec);
    for j in 0..rng.gen_range(0..3) {
        obj = obj.with_label(format!("k{j}"), format!("v{}", rng.gen_range(0..4)));
    }
    match rng.gen_range(0..4) {
        0 => obj,
        1 => obj.with_label(WATCH_LABEL, "lite"),
        2 => obj.with_label(WATCH_LABEL, "detail"),
        _ => obj.with_label(WATCH_LABEL, "debug"),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ClusterStore::new();
    let objs: Vec<ResourceObject> = (0..1000).map(|i| random_object(&mut rng, i)).collect();
    for o in &objs {
        store.apply(o.clone()).map_err(|e| e.to_string())?;
    }
    let labelled: BTreeSet<ResourceKey> = objs
        .iter()
        .filter(|o| o.labels.contains_key(WATCH_LABEL))
        .map(|o| o.key.clone())
        .collect();
    let reports = scan("c1", &store, 0);
    let reported: BTreeSet<ResourceKey> = reports.iter().map(|r| r.resource_key.clone()).collect();
    ensure(
        reported == labelled,
        format!("{} reported, {} labelled", reported.len(), labelled.len()),
    )?;
    for o in store.objects() {
        let r = report_for("c1", o, 0, ReportTrigger::Event);
        match o.labels.get(WATCH_LABEL).map(String::as_str) {
            None => ensure(r.is_none(), format!("unlabelled {} reported", o.key))?,
            Some("lite") => ensure(
                r.is_some_and(|r| r.payload.get("spec").is_none()),
                format!("lite {} carries spec", o.key),
            )?,
            Some("detail") => ensure(
                r.is_some_and(|r| r.payload.get("spec") == Some(&o.spec)),
                format!("detail {} lacks spec", o.key),
            )?,
            Some(_) => ensure(r.is_some(), format!("debug {} not reported", o.key))?,
        }
    }

    let cp = Arc::new(ControlPlane::new(
        Credentials::new("org", "key", "admin"),
        Arc::new(MemoryArtifactStore::new()),
        Arc::new(ManualClock::new(0)),
    ));
    let client = InProcessClient::new(cp, "org");
    let mut store = ClusterStore::new();
    let key = ResourceKey::new("v1", "ConfigMap", "default", "burst");
    store
        .apply(ResourceObject::new(key.clone(), json!({"n": 0})).with_label(WATCH_LABEL, "lite"))
        .map_err(|e| e.to_string())?;
    let mut agent = Agent::new(AgentConfig::new("c1", "org", tags(&["demo"])));
    agent.tick(&client, &mut store, 0);
    for n in 1..=10 {
        store
            .apply(
                ResourceObject::new(key.clone(), json!({"n": n})).with_label(WATCH_LABEL, "lite"),
            )
            .map_err(|e| e.to_string())?;
    }
    let s = agent.tick(&client, &mut store, 10);
    ensure(
        s.event_reports == 1,
        format!("burst of 10 edits gave {} event reports", s.event_reports),
    )?;
    Ok(format!(
        "1000 resources: {} labelled all reported, levels hold; burst of 10 -> 1 report",
        labelled.len()
    ))
}

fn criterion_7() -> Outcome {
    let mut cfg = SimConfig {
        num_clusters: 25,
        ..SimConfig::default()
    };
    let a = run_pull_rollout(&cfg).map_err(|e| e.to_string())?;
    let b = run_pull_rollout(&cfg).map_err(|e| e.to_string())?;
    cfg.exec = ExecMode::Sequential;
    let c = run_pull_rollout(&cfg).map_err(|e| e.to_string())?;
    ensure(
        a.trace_digest == b.trace_digest,
        "repeat run digest differs",
    )?;
    ensure(
        a.trace_digest == c.trace_digest,
        "sequential digest differs from parallel",
    )?;
    Ok(format!(
        "{} over {} trace lines",
        a.trace_digest, a.trace_len
    ))
}

fn subset_by_enumeration(sub: &[String], cluster: &[String]) -> bool {
    // A match means some subset of the cluster's tags equals the subscription's.
    let want: BTreeSet<&String> = sub.iter().collect();
    (0u32..1 << cluster.len()).any(|mask| {
        let s: BTreeSet<&String> = cluster
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| t)
            .collect();
        s == want
    })
}

fn tag_oracle() -> Result<usize, String> {
    let universe: Vec<String> = (0..7).map(|i| format!("t{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cp = ControlPlane::new(
        Credentials::new("org", "key", "admin"),
        Arc::new(MemoryArtifactStore::new()),
        Arc::new(ManualClock::new(0)),
    );
    cp.create_channel("ch").map_err(|e| e.to_string())?;
    cp.upload_version(
        "ch",
        "1",
        b"kind: ConfigMap\napiVersion: v1\nmetadata: {name: x}\n",
        cp.credentials(),
    )
    .map_err(|e| e.to_string())?;
    let mut subs = Vec::new();
    for i in 0..20 {
        let n = rng.gen_range(1..=3);
        let t: Vec<String> = universe.choose_multiple(&mut rng, n).cloned().collect();
        let s = cp
            .create_subscription(&format!("s{i}"), "ch", "1", t.iter().cloned().collect())
            .map_err(|e| e.to_string())?;
        subs.push((s.id, t));
    }
    let mut mismatches = 0;
    let mut cases = 0;
    for i in 0..500 {
        let n = rng.gen_range(0..=universe.len());
        let ctags: Vec<String> = universe.choose_multiple(&mut rng, n).cloned().collect();
        let id = format!("c{i}");
        cp.register_cluster("org", &id, ctags.iter().cloned().collect())
            .map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = cp
            .poll_subscriptions(&id, &ctags.iter().cloned().collect())
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|h| h.sub_id)
            .collect();
        for (sid, stags) in &subs {
            cases += 1;
            if got.contains(sid) != subset_by_enumeration(stags, &ctags) {
                mismatches += 1;
            }
        }
    }
    ensure(cases == 10_000, format!("{cases} cases"))?;
    ensure(
        mismatches == 0,
        format!("{mismatches} tag-matching mismatches"),
    )?;
    Ok(cases)
}

fn replay_oracle(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ClusterStore::new();
    let mut live: Vec<ResourceKey> = Vec::new();
    for op in 0..500 {
        match rng.gen_range(0..10) {
            0..=4 => {
                let i = rng.gen_range(0..60);
                let mut obj = random_object(&mut rng, i);
                if !live.is_empty() && rng.gen_bool(0.3) {
                    obj = obj.with_owner(live.choose(&mut rng).unwrap().clone());
                }
                if obj.owner_refs.contains(&obj.key) {
                    continue;
                }
                store.apply(obj).map_err(|e| format!("op {op}: {e}"))?;
            }
            5..=6 if !live.is_empty() => {
                let k = live.choose(&mut rng).unwrap().clone();
                store
                    .update_status(&k, {
                        let phase = *["Running", "Pending"].choose(&mut rng).unwrap();
                        json!({"phase": phase})
                    })
                    .map_err(|e| e.to_string())?;
            }
            7..=8 if !live.is_empty() => {
                let k = live.choose(&mut rng).unwrap().clone();
                store.delete(&k).map_err(|e| e.to_string())?;
            }
            _ => {
                store.collect_garbage();
            }
        }
        live = store.objects().map(|o| o.key.clone()).collect();
    }
    let mut replayed: BTreeMap<ResourceKey, ResourceObject> = BTreeMap::new();
    for ev in store.watch(&WatchFilter::all(), 0) {
        match ev.event_type {
            EventType::Added | EventType::Modified => {
                replayed.insert(ev.object.key.clone(), ev.object.clone());
            }
            EventType::Deleted => {
                replayed.remove(&ev.object.key);
            }
        }
    }
    let actual: BTreeMap<ResourceKey, ResourceObject> = store
        .objects()
        .map(|o| (o.key.clone(), o.clone()))
        .collect();
    let keys: BTreeSet<&ResourceKey> = replayed.keys().chain(actual.keys()).collect();
    Ok(keys
        .into_iter()
        .filter(|k| replayed.get(*k) != actual.get(*k))
        .count())
}

fn criterion_8() -> Outcome {
    let cases = tag_oracle()?;
    let workloads = 20;
    let mut mismatches = 0;
    for seed in 0..workloads {
        mismatches += replay_oracle(seed)?;
    }
    ensure(mismatches == 0, format!("{mismatches} replay mismatches"))?;
    Ok(format!(
        "{cases} tag cases, 0 mismatches; {workloads} x 500-op replays, 0 mismatches"
    ))
}

fn main() {
    // libtest flags such as --nocapture or --quiet are accepted and ignored.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [Criterion; 8] = [
        ("pull scale-invariance, push linearity", criterion_1),
        ("end-to-end operator deploy", criterion_2),
        ("instance lifecycle", criterion_3),
        ("self-healing", criterion_4),
        ("upgrade rollout", criterion_5),
        ("watch-keeper levels", criterion_6),
        ("determinism", criterion_7),
        ("oracle equivalences", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", i + 1);
        if filter
            .as_ref()
            .is_some_and(|f| !label.contains(f.as_str()) && !name.contains(f.as_str()))
        {
            continue;
        }
        match f() {
            Ok(detail) => println!("{label} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{label} FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
