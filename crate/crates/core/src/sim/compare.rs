use serde::{Deserialize, Serialize};

use super::*;

pub const DEFAULT_SWEEP: [usize; 4] = [1, 10, 100, 1000];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub n: usize,
    pub pull_time: Option<u64>,
    pub pull_workload_time: Option<u64>,
    pub push_time: Option<u64>,
    pub pull_digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub poll_interval: u64,
    pub push_parallelism: usize,
    pub per_cluster_push_cost: u64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// `max - min` of the pull column; `None` if any run did not converge.
    pub fn pull_spread(&self) -> Option<u64> {
        let times: Option<Vec<u64>> = self.rows.iter().map(|r| r.pull_time).collect();
        let times = times?;
        Some(times.iter().max()? - times.iter().min()?)
    }

    pub fn pull_flat(&self) -> bool {
        self.pull_spread().is_some_and(|s| s <= self.poll_interval)
    }

    /// Push time equals `ceil(n / k) * c` on every row.
    pub fn push_linear(&self) -> bool {
        self.rows.iter().all(|r| {
            r.push_time
                == Some(r.n.div_ceil(self.push_parallelism) as u64 * self.per_cluster_push_cost)
        })
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        let header = ["N", "pull_time", "pull_workload_time", "push_time"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.n.to_string(),
                    opt(r.pull_time),
                    opt(r.pull_workload_time),
                    opt(r.push_time),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..4)
            .map(|i| {
                body.iter()
                    .map(|r| r[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: [&str; 4]| {
            let cols: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            cols.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = format!(
            "poll_interval={} push_parallelism={} per_cluster_push_cost={}\n",
            self.poll_interval, self.push_parallelism, self.per_cluster_push_cost
        );
        out.push_str(&line(header));
        for r in &body {
            out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
        }
        out
    }
}

/// Run both models for every `n` in `sweep`, holding everything else in
/// `cfg` fixed. Runs that hit the horizon report `None`.
pub fn compare_models(cfg: &SimConfig, sweep: &[usize]) -> Result<ComparisonTable, SimError> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(sweep.len());
    for &n in sweep {
        let mut c = cfg.clone();
        c.num_clusters = n;
        c.faults.retain(|f| match &f.kind {
            FaultKind::KillPod { cluster, .. } | FaultKind::AgentOffline { cluster, .. } => {
                *cluster < n
            }
            FaultKind::ArtifactUnreachable { .. } => true,
        });
        let pull = match run_pull_rollout(&c) {
            Ok(r) => r,
            Err(SimError::HorizonExceeded(r)) => *r,
            Err(e) => return Err(e),
        };
        let push = match run_push_rollout(&c) {
            Ok(r) => r,
            Err(SimError::HorizonExceeded(r)) => *r,
            Err(e) => return Err(e),
        };
        rows.push(ComparisonRow {
            n,
            pull_time: pull.convergence_time,
            pull_workload_time: pull.workload_convergence_time,
            push_time: push.convergence_time,
            pull_digest: pull.trace_digest,
        });
    }
    Ok(ComparisonTable {
        poll_interval: cfg.poll_interval,
        push_parallelism: cfg.push_parallelism,
        per_cluster_push_cost: cfg.per_cluster_push_cost,
        rows,
    })
}
