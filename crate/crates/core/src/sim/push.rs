//! The push baseline: a central server runs one deployment job per matching
//! cluster, at most `push_parallelism` at a time, each taking
//! `per_cluster_push_cost`. Jobs are list-scheduled in cluster order onto the
//! earliest-free worker. A job cannot start while its cluster is unreachable
//! (`agent_offline`) or the artifact is unavailable.

use super::*;
use crate::bundle::Bundle;
use crate::clock::Timestamp;
use crate::cluster::{ClusterStore, ResourceObject, CRD_KIND};
use crate::operator::{build_operator_bundle, nginx_instance, pod_key, OperatorHost};

use super::pull::{cluster_name, INITIAL_VERSION, INSTANCE_NAMESPACE, UPGRADE_VERSION};

fn apply_bundle(store: &mut ClusterStore, bundle: &Bundle) -> Result<(), String> {
    let mut objs = bundle
        .documents()
        .iter()
        .map(|d| ResourceObject::from_document(d, "default").map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    objs.sort_by_key(|o| o.key.kind != CRD_KIND);
    for o in objs {
        store.apply(o).map_err(|e| e.to_string())?;
    }
    Ok(())
}

struct PushCluster {
    id: String,
    store: ClusterStore,
    host: OperatorHost,
    /// `(time, fault)` pairs touching this cluster, plus the job end as `None`.
    events: Vec<(Timestamp, Option<(String, String)>)>,
}

pub fn run_push_rollout(cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let flip = cfg.flip_at.unwrap_or(0);
    let initial =
        Bundle::parse(&build_operator_bundle(INITIAL_VERSION)).expect("operator bundle parses");
    let upgrade =
        Bundle::parse(&build_operator_bundle(UPGRADE_VERSION)).expect("operator bundle parses");

    let matching: Vec<usize> = (0..cfg.num_clusters)
        .filter(|i| cfg.subscription_tags.is_subset(&cfg.tags_for(*i)))
        .collect();

    let mut offline_until = vec![0; cfg.num_clusters];
    let mut artifact_until = 0;
    for f in &cfg.faults {
        match &f.kind {
            FaultKind::AgentOffline { cluster, until } => {
                offline_until[*cluster] = offline_until[*cluster].max(*until)
            }
            FaultKind::ArtifactUnreachable { until } => artifact_until = artifact_until.max(*until),
            FaultKind::KillPod { .. } => {}
        }
    }

    let k = cfg.push_parallelism;
    let c = cfg.per_cluster_push_cost;
    let mut workers = vec![flip; k];
    let mut trace = vec![format!(
        "t=0 admin push-install {INITIAL_VERSION} clusters={}",
        matching.len()
    )];
    let mut jobs = Vec::with_capacity(matching.len());
    for &i in &matching {
        let (w, free) = workers
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|&(w, t)| (t, w))
            .expect("parallelism >= 1");
        let start = free.max(offline_until[i]).max(artifact_until);
        let end = start + c;
        workers[w] = end;
        jobs.push((i, w, start, end));
    }
    if let Some(end) = jobs
        .iter()
        .map(|j| j.3)
        .max()
        .filter(|e| cfg.flip_at.is_some() && *e > cfg.horizon)
    {
        return Err(SimError::HorizonExceeded(Box::new(report(
            cfg, &matching, &jobs, &trace, end, false,
        ))));
    }

    let mut clusters: Vec<PushCluster> = matching
        .iter()
        .map(|&i| {
            let mut events = Vec::new();
            for f in &cfg.faults {
                if let FaultKind::KillPod {
                    cluster,
                    namespace,
                    name,
                } = &f.kind
                {
                    if *cluster == i {
                        events.push((f.at, Some((namespace.clone(), name.clone()))));
                    }
                }
            }
            let store = ClusterStore::new();
            let host = OperatorHost::new(&store, 0);
            PushCluster {
                id: cluster_name(i),
                store,
                host,
                events,
            }
        })
        .collect();
    for (pc, job) in clusters.iter_mut().zip(&jobs) {
        if cfg.flip_at.is_some() {
            pc.events.push((job.3, None));
        }
        pc.events.sort();
    }

    let instances_at = cfg.instances_at();
    let per_cluster_lines = map_mut(
        cfg.exec,
        &mut clusters,
        |pc| -> Result<Vec<(Timestamp, String)>, String> {
            let mut lines = Vec::new();
            apply_bundle(&mut pc.store, &initial)?;
            pc.host
                .run_to_quiescence(&mut pc.store, 0)
                .map_err(|e| e.to_string())?;
            for n in 0..cfg.instances_per_cluster {
                let cr = nginx_instance(
                    INSTANCE_NAMESPACE,
                    &format!("example-nginx-{n}"),
                    cfg.instance_replicas,
                    cfg.instance_ingress,
                );
                pc.store.apply(cr).map_err(|e| e.to_string())?;
            }
            pc.host
                .run_to_quiescence(&mut pc.store, instances_at)
                .map_err(|e| e.to_string())?;
            for (t, ev) in &pc.events {
                match ev {
                    Some((ns, name)) => {
                        let hit = pc.store.delete(&pod_key(ns, name)).is_ok();
                        lines.push((
                            *t,
                            format!(
                                "t={t} fault kill_pod {} {ns}/{name} hit={}",
                                pc.id,
                                u8::from(hit)
                            ),
                        ));
                    }
                    None => {
                        apply_bundle(&mut pc.store, &upgrade)?;
                        lines.push((
                            *t,
                            format!("t={t} push-done {} version={UPGRADE_VERSION}", pc.id),
                        ));
                    }
                }
                let passes = pc
                    .host
                    .run_to_quiescence(&mut pc.store, *t)
                    .map_err(|e| e.to_string())?;
                lines.push((
                    *t,
                    format!(
                        "t={t} {} reconcile passes={passes} seq={}",
                        pc.id,
                        pc.store.sequence()
                    ),
                ));
            }
            Ok(lines)
        },
    );

    let mut timed = Vec::new();
    if cfg.flip_at.is_some() {
        trace.push(format!("t={flip} admin flip {UPGRADE_VERSION}"));
    }
    for (pos, (i, w, start, _)) in jobs.iter().enumerate().filter(|_| cfg.flip_at.is_some()) {
        timed.push((
            *start,
            pos,
            0,
            format!("t={start} push-start {} worker={w}", cluster_name(*i)),
        ));
    }
    for (pos, lines) in per_cluster_lines.into_iter().enumerate() {
        let lines = lines
            .map_err(|e| SimError::InvalidConfig(format!("push to {}: {e}", clusters[pos].id)))?;
        for (seq, (t, l)) in lines.into_iter().enumerate() {
            timed.push((t, pos, seq + 1, l));
        }
    }
    timed.sort();
    trace.extend(timed.into_iter().map(|(_, _, _, l)| l));

    let end = jobs
        .iter()
        .map(|j| j.3)
        .max()
        .filter(|_| cfg.flip_at.is_some())
        .unwrap_or(flip);
    Ok(report(cfg, &matching, &jobs, &trace, end, true))
}

fn report(
    cfg: &SimConfig,
    matching: &[usize],
    jobs: &[(usize, usize, Timestamp, Timestamp)],
    trace: &[String],
    end: Timestamp,
    finished: bool,
) -> SimReport {
    let flip = cfg.flip_at.unwrap_or(0);
    let per_cluster_times: Vec<ClusterTime> = jobs
        .iter()
        .map(|&(i, _, _, job_end)| {
            let done = (finished && cfg.flip_at.is_some()).then(|| job_end - flip);
            let done = if cfg.flip_at.is_none() { Some(0) } else { done };
            ClusterTime {
                cluster_id: cluster_name(i),
                applied: done,
                workload: done,
            }
        })
        .collect();
    let max_of = |f: fn(&ClusterTime) -> Option<u64>| {
        per_cluster_times
            .iter()
            .map(f)
            .try_fold(0, |acc, x| x.map(|x| acc.max(x)))
    };
    SimReport {
        model: RolloutModel::Push,
        num_clusters: cfg.num_clusters,
        matching_clusters: matching.len(),
        convergence_time: max_of(|c| c.applied),
        workload_convergence_time: max_of(|c| c.workload),
        events_processed: (jobs.len() + cfg.faults.len() + usize::from(cfg.flip_at.is_some()))
            as u64,
        alerts_fired: 0,
        admin_cluster_actions_after_flip: if cfg.flip_at.is_some() { jobs.len() } else { 0 },
        per_cluster_times,
        end_time: end,
        trace_len: trace.len(),
        trace_digest: digest_lines(trace),
    }
}
