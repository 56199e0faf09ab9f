//! Thin wrappers over the control-plane HTTP API. In JSON mode the response
//! body is printed exactly as received.

use std::path::PathBuf;

use clap::Subcommand;
use razorcd::control_plane::RESOURCE_NAME_HEADER;
use razorcd::http::{percent_encode, HttpRequest};
use razorcd::net::HttpClient;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::{cell, table, text, OutputFormat};

pub struct Ctx {
    pub client: HttpClient,
    pub output: OutputFormat,
}

impl Ctx {
    /// Send, print the raw body in JSON mode, and return it parsed.
    fn call(&self, req: HttpRequest) -> Result<Option<Value>, CliError> {
        let resp = self.client.send(&req)?;
        let body = resp.body_json().ok();
        if !resp.is_success() {
            let field = |k: &str| {
                body.as_ref()
                    .and_then(|b| b.get(k))
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string()
            };
            let code = match field("code") {
                c if c.is_empty() => format!("HTTP {}", resp.status),
                c => c,
            };
            return Err(CliError::Api {
                code,
                message: field("message"),
                body: Some(resp.body_text()),
            });
        }
        if self.output == OutputFormat::Json {
            println!("{}", resp.body_text());
            return Ok(None);
        }
        Ok(Some(body.unwrap_or(Value::Null)))
    }
}

fn tags_arg(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn enc(s: &str) -> String {
    percent_encode(s)
}

#[derive(Debug, Subcommand)]
pub enum ChannelCmd {
    Create {
        name: String,
    },
    List,
    Get {
        name: String,
    },
    Delete {
        name: String,
    },
    /// Upload a bundle file as a new version.
    Upload {
        channel: String,
        #[arg(long)]
        version: String,
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
    },
}

pub fn channel(ctx: &Ctx, cmd: ChannelCmd) -> Result<(), CliError> {
    match cmd {
        ChannelCmd::Create { name } => {
            if let Some(v) =
                ctx.call(HttpRequest::post("/api/v1/channels").with_json(&json!({"name": name})))?
            {
                println!("created channel {}", cell(&v["channel"], "name"));
            }
        }
        ChannelCmd::List => {
            if let Some(v) = ctx.call(HttpRequest::get("/api/v1/channels"))? {
                let rows: Vec<Vec<String>> = v["channels"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|c| {
                        vec![
                            cell(c, "name"),
                            cell(c, "version_count"),
                            cell(c, "latest"),
                            cell(c, "created_at"),
                        ]
                    })
                    .collect();
                print!(
                    "{}",
                    table(&["NAME", "VERSIONS", "LATEST", "CREATED"], &rows)
                );
            }
        }
        ChannelCmd::Get { name } => {
            if let Some(v) = ctx.call(HttpRequest::get(&format!(
                "/api/v1/channels/{}",
                enc(&name)
            )))? {
                let c = &v["channel"];
                println!("channel {}", cell(c, "name"));
                let rows: Vec<Vec<String>> = c["versions"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|x| {
                        vec![
                            cell(x, "name"),
                            cell(x, "uid"),
                            cell(x, "content_hash"),
                            cell(x, "created_at"),
                        ]
                    })
                    .collect();
                print!("{}", table(&["VERSION", "UID", "HASH", "CREATED"], &rows));
            }
        }
        ChannelCmd::Delete { name } => {
            if ctx
                .call(HttpRequest::new(
                    "DELETE",
                    &format!("/api/v1/channels/{}", enc(&name)),
                ))?
                .is_some()
            {
                println!("deleted channel {name}");
            }
        }
        ChannelCmd::Upload {
            channel,
            version,
            file,
        } => {
            let bytes = std::fs::read(&file)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", file.display())))?;
            let req = HttpRequest::post(&format!("/api/v1/channels/{}/version", enc(&channel)))
                .with_header("content-type", "text/yaml")
                .with_header(RESOURCE_NAME_HEADER, version)
                .with_body(bytes);
            if let Some(v) = ctx.call(req)? {
                let x = &v["version"];
                println!(
                    "uploaded {} uid={} location={}",
                    cell(x, "name"),
                    cell(x, "uid"),
                    cell(x, "location")
                );
            }
        }
    }
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum SubscriptionCmd {
    Create {
        name: String,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        version: String,
        /// Comma-separated; a cluster matches when it carries all of them.
        #[arg(long)]
        tags: String,
    },
    List,
    Get {
        id: String,
    },
    /// Point a subscription at another version of its channel.
    SetVersion {
        id: String,
        version: String,
    },
    Delete {
        id: String,
    },
}

fn subscription_rows(subs: &[Value]) -> String {
    let rows: Vec<Vec<String>> = subs
        .iter()
        .map(|s| {
            vec![
                cell(s, "id"),
                cell(s, "name"),
                cell(s, "channel_name"),
                cell(s, "version_name"),
                cell(s, "tags"),
                cell(s, "revision"),
            ]
        })
        .collect();
    table(
        &["ID", "NAME", "CHANNEL", "VERSION", "TAGS", "REVISION"],
        &rows,
    )
}

pub fn subscription(ctx: &Ctx, cmd: SubscriptionCmd) -> Result<(), CliError> {
    let one = |v: Option<Value>| {
        if let Some(v) = v {
            print!(
                "{}",
                subscription_rows(std::slice::from_ref(&v["subscription"]))
            );
        }
    };
    match cmd {
        SubscriptionCmd::Create {
            name,
            channel,
            version,
            tags,
        } => {
            let body = json!({"name": name, "channel": channel, "version": version, "tags": tags_arg(&tags)});
            one(ctx.call(HttpRequest::post("/api/v1/subscriptions").with_json(&body))?);
        }
        SubscriptionCmd::List => {
            if let Some(v) = ctx.call(HttpRequest::get("/api/v1/subscriptions"))? {
                print!(
                    "{}",
                    subscription_rows(
                        v["subscriptions"]
                            .as_array()
                            .map(Vec::as_slice)
                            .unwrap_or_default()
                    )
                );
            }
        }
        SubscriptionCmd::Get { id } => one(ctx.call(HttpRequest::get(&format!(
            "/api/v1/subscriptions/{}",
            enc(&id)
        )))?),
        SubscriptionCmd::SetVersion { id, version } => {
            let req = HttpRequest::new(
                "PATCH",
                &format!("/api/v1/subscriptions/{}/version", enc(&id)),
            )
            .with_json(&json!({"version": version}));
            one(ctx.call(req)?);
        }
        SubscriptionCmd::Delete { id } => {
            if ctx
                .call(HttpRequest::new(
                    "DELETE",
                    &format!("/api/v1/subscriptions/{}", enc(&id)),
                ))?
                .is_some()
            {
                println!("deleted subscription {id}");
            }
        }
    }
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum ClusterCmd {
    List,
    /// Latest reported resources of one cluster.
    Resources {
        id: String,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        namespace: Option<String>,
        /// `k=v`, repeatable.
        #[arg(long)]
        label: Vec<String>,
    },
    /// Report history of one resource.
    History {
        id: String,
        #[arg(long)]
        api_version: String,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        namespace: String,
        #[arg(long)]
        name: String,
    },
}

fn report_rows(reports: &[Value]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let k = &r["resource_key"];
            let phase = r["payload"]["status"]["phase"].clone();
            vec![
                cell(k, "kind"),
                cell(k, "namespace"),
                cell(k, "name"),
                cell(r, "level"),
                text(&phase),
                cell(r, "observed_at"),
            ]
        })
        .collect();
    table(
        &["KIND", "NAMESPACE", "NAME", "LEVEL", "PHASE", "OBSERVED"],
        &rows,
    )
}

pub fn cluster(ctx: &Ctx, cmd: ClusterCmd) -> Result<(), CliError> {
    match cmd {
        ClusterCmd::List => {
            if let Some(v) = ctx.call(HttpRequest::get("/api/v1/clusters"))? {
                let rows: Vec<Vec<String>> = v["clusters"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|c| {
                        vec![
                            cell(c, "cluster_id"),
                            cell(c, "tags"),
                            cell(c, "last_seen"),
                            cell(c, "resource_count"),
                        ]
                    })
                    .collect();
                print!(
                    "{}",
                    table(&["CLUSTER", "TAGS", "LAST_SEEN", "RESOURCES"], &rows)
                );
            }
        }
        ClusterCmd::Resources {
            id,
            kind,
            namespace,
            label,
        } => {
            let mut q = Vec::new();
            if let Some(k) = kind {
                q.push(format!("kind={}", enc(&k)));
            }
            if let Some(ns) = namespace {
                q.push(format!("namespace={}", enc(&ns)));
            }
            if !label.is_empty() {
                q.push(format!("label={}", enc(&label.join(","))));
            }
            let target = format!("/api/v1/clusters/{}/resources?{}", enc(&id), q.join("&"));
            if let Some(v) = ctx.call(HttpRequest::get(&target))? {
                print!(
                    "{}",
                    report_rows(
                        v["resources"]
                            .as_array()
                            .map(Vec::as_slice)
                            .unwrap_or_default()
                    )
                );
            }
        }
        ClusterCmd::History {
            id,
            api_version,
            kind,
            namespace,
            name,
        } => {
            let target = format!(
                "/api/v1/clusters/{}/resources/history?apiVersion={}&kind={}&namespace={}&name={}",
                enc(&id),
                enc(&api_version),
                enc(&kind),
                enc(&namespace),
                enc(&name)
            );
            if let Some(v) = ctx.call(HttpRequest::get(&target))? {
                print!(
                    "{}",
                    report_rows(
                        v["history"]
                            .as_array()
                            .map(Vec::as_slice)
                            .unwrap_or_default()
                    )
                );
            }
        }
    }
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum AlertCmd {
    /// Exactly one of `--stale` or `--status-not` selects the condition.
    Create {
        name: String,
        /// Fire when a cluster has been silent longer than this many seconds.
        #[arg(long, conflicts_with = "status_not")]
        stale: Option<u64>,
        /// Fire when a resource's phase differs from this value.
        #[arg(long, requires = "grace")]
        status_not: Option<String>,
        /// Seconds the phase may differ before firing.
        #[arg(long)]
        grace: Option<u64>,
        #[arg(long)]
        cluster: Option<String>,
        /// Comma-separated cluster tags the rule is limited to.
        #[arg(long)]
        scope_tags: Option<String>,
    },
    List,
    Firings {
        #[arg(long)]
        now: Option<u64>,
    },
    Delete {
        id: String,
    },
}

pub fn alert(ctx: &Ctx, cmd: AlertCmd) -> Result<(), CliError> {
    match cmd {
        AlertCmd::Create {
            name,
            stale,
            status_not,
            grace,
            cluster,
            scope_tags,
        } => {
            let condition = match (stale, status_not) {
                (Some(s), None) => json!({"type": "cluster_stale", "max_silence": s}),
                (None, Some(expected)) => {
                    json!({"type": "resource_status_not", "expected": expected, "grace": grace})
                }
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --stale or --status-not".into(),
                    ))
                }
            };
            let mut body = json!({"name": name, "condition": condition});
            if cluster.is_some() || scope_tags.is_some() {
                body["scope"] = json!({"cluster_id": cluster, "tags": tags_arg(scope_tags.as_deref().unwrap_or(""))});
            }
            if let Some(v) = ctx.call(HttpRequest::post("/api/v1/alerts").with_json(&body))? {
                println!(
                    "created rule {} ({})",
                    cell(&v["rule"], "id"),
                    cell(&v["rule"], "name")
                );
            }
        }
        AlertCmd::List => {
            if let Some(v) = ctx.call(HttpRequest::get("/api/v1/alerts"))? {
                let rows: Vec<Vec<String>> = v["rules"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|r| {
                        vec![
                            cell(r, "id"),
                            cell(r, "name"),
                            cell(&r["condition"], "type"),
                        ]
                    })
                    .collect();
                print!("{}", table(&["ID", "NAME", "CONDITION"], &rows));
            }
        }
        AlertCmd::Firings { now } => {
            let target = match now {
                Some(n) => format!("/api/v1/alerts/firings?now={n}"),
                None => "/api/v1/alerts/firings".into(),
            };
            if let Some(v) = ctx.call(HttpRequest::get(&target))? {
                let rows: Vec<Vec<String>> = v["firings"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|f| vec![cell(f, "rule_name"), cell(f, "subject"), cell(f, "since")])
                    .collect();
                print!("{}", table(&["RULE", "SUBJECT", "SINCE"], &rows));
            }
        }
        AlertCmd::Delete { id } => {
            if ctx
                .call(HttpRequest::new(
                    "DELETE",
                    &format!("/api/v1/alerts/{}", enc(&id)),
                ))?
                .is_some()
            {
                println!("deleted rule {id}");
            }
        }
    }
    Ok(())
}
