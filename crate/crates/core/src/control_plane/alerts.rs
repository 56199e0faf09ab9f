use std::collections::BTreeMap;

use super::{AlertCondition, AlertFiring, AlertRule, ApiError, ClusterRecord, ReportIndex};
use crate::clock::Timestamp;

pub(super) fn validate(name: &str, condition: &AlertCondition) -> Result<(), ApiError> {
    if name.trim().is_empty() {
        return Err(ApiError::InvalidRule("name must not be empty".into()));
    }
    match condition {
        AlertCondition::ClusterStale { max_silence: 0 } => {
            Err(ApiError::InvalidRule("max_silence must be positive".into()))
        }
        AlertCondition::ResourceStatusNot { grace: 0, .. } => {
            Err(ApiError::InvalidRule("grace must be positive".into()))
        }
        AlertCondition::ResourceStatusNot { expected, .. } if expected.is_empty() => Err(
            ApiError::InvalidRule("expected phase must not be empty".into()),
        ),
        _ => Ok(()),
    }
}

/// Firings sorted by (rule_id, subject).
///
/// `cluster_stale` fires when `now - last_seen > max_silence`, with `since`
/// set to `last_seen + max_silence`.
///
/// `resource_status_not` looks at the trailing run of reports whose phase is
/// not `expected`; `since` is the observation time of the run's first report
/// and the rule fires when `now - since > grace`. Reports observed after `now`
/// are ignored.
pub(super) fn evaluate<'a>(
    rules: impl Iterator<Item = &'a AlertRule>,
    inventory: &BTreeMap<String, ClusterRecord>,
    reports: &ReportIndex,
    now: Timestamp,
) -> Vec<AlertFiring> {
    let mut out = Vec::new();
    for rule in rules {
        let in_scope = |c: &ClusterRecord| rule.scope.as_ref().is_none_or(|s| s.covers(c));
        match &rule.condition {
            AlertCondition::ClusterStale { max_silence } => {
                for c in inventory.values().filter(|c| in_scope(c)) {
                    if now.saturating_sub(c.last_seen) > *max_silence {
                        out.push(AlertFiring {
                            rule_id: rule.id.clone(),
                            rule_name: rule.name.clone(),
                            subject: c.cluster_id.clone(),
                            since: c.last_seen + max_silence,
                        });
                    }
                }
            }
            AlertCondition::ResourceStatusNot { expected, grace } => {
                for ((cluster_id, key), history) in reports {
                    let Some(c) = inventory.get(cluster_id) else {
                        continue;
                    };
                    if !in_scope(c) {
                        continue;
                    }
                    let mut since = None;
                    for r in history.reports.iter().filter(|r| r.observed_at <= now) {
                        if r.phase() == Some(expected.as_str()) {
                            since = None;
                        } else if since.is_none() {
                            since = Some(r.observed_at);
                        }
                    }
                    if let Some(since) = since.filter(|s| now - s > *grace) {
                        out.push(AlertFiring {
                            rule_id: rule.id.clone(),
                            rule_name: rule.name.clone(),
                            subject: format!("{cluster_id}/{key}"),
                            since,
                        });
                    }
                }
            }
        }
    }
    out.sort();
    out
}
