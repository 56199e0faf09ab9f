//! Long-running commands: the control-plane server and the cluster agent.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clap::Args;
use razorcd::agent::{Agent, AgentConfig, ControlPlaneClient};
use razorcd::clock::SystemClock;
use razorcd::cluster::{ClusterApi, ClusterStore, StoreSnapshot};
use razorcd::net::{
    cluster_api_handler, control_plane_handler, HttpClient, HttpServer, ServerConfig,
};
use razorcd::operator::OperatorHost;

use crate::error::CliError;
use crate::output::OutputFormat;

fn stop_flag() -> Result<Arc<AtomicBool>, CliError> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed))
        .map_err(|e| CliError::Config(format!("cannot install signal handler: {e}")))?;
    Ok(stop)
}

fn env(k: &str) -> Option<String> {
    std::env::var(k).ok()
}

pub fn serve(config: &Path) -> Result<(), CliError> {
    let mut cfg = ServerConfig::load(config).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.apply_env(env);
    let plane = cfg
        .build_plane(Arc::new(SystemClock))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let server = HttpServer::bind(&cfg.listen, control_plane_handler(Arc::new(plane)))
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let stop = stop_flag()?;
    eprintln!("razorcd control plane listening on {}", server.base_url());
    server.run(&stop);
    Ok(())
}

#[derive(Debug, Args)]
pub struct AgentRunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Expose the simulated cluster's API on this address.
    #[arg(long)]
    pub cluster_api: Option<String>,
    /// Bearer token for the cluster API.
    #[arg(long, env = "RAZORCD_CLUSTER_TOKEN", default_value = "cluster-admin")]
    pub token: String,
    /// Cluster state file, loaded at start and written after every tick.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Run one tick and exit.
    #[arg(long)]
    pub once: bool,
}

fn load_state(path: &Path) -> Result<ClusterStore, CliError> {
    match std::fs::read(path) {
        Ok(bytes) => {
            let snap: StoreSnapshot = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))?;
            Ok(ClusterStore::from_snapshot(snap))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ClusterStore::new()),
        Err(e) => Err(CliError::Config(format!(
            "cannot read {}: {e}",
            path.display()
        ))),
    }
}

fn save_state(path: &Path, store: &ClusterStore) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let bytes =
        serde_json::to_vec(&store.snapshot()).map_err(|e| CliError::Domain(e.to_string()))?;
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))
}

pub fn agent(
    args: AgentRunArgs,
    url_flag: Option<&str>,
    output: OutputFormat,
) -> Result<(), CliError> {
    let mut cfg = AgentConfig::load(&args.config).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.apply_env(env);
    if let Some(url) = url_flag {
        cfg.control_plane_url = url.to_string();
    }
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.control_plane_url.is_empty() {
        return Err(CliError::Config("control_plane_url is not set".into()));
    }
    let client = HttpClient::new(&cfg.control_plane_url).with_org_key(&cfg.org_key);
    client.register(&cfg.cluster_id, &cfg.tags)?;

    let store = match &args.state {
        Some(p) => load_state(p)?,
        None => ClusterStore::new(),
    };
    let store = Arc::new(Mutex::new(store));
    let _api = match &args.cluster_api {
        Some(addr) => {
            let server = HttpServer::bind(
                addr,
                cluster_api_handler(ClusterApi::new(&args.token), store.clone()),
            )
            .map_err(|e| CliError::Domain(e.to_string()))?;
            eprintln!("cluster API listening on {}", server.base_url());
            Some(server.spawn())
        }
        None => None,
    };
    let stop = stop_flag()?;
    let start = Instant::now();
    let mut agent = Agent::new(cfg);
    let mut host = OperatorHost::new(&store.lock().unwrap_or_else(|e| e.into_inner()), 0);
    loop {
        let now = start.elapsed().as_secs();
        let wake = {
            let mut store = store.lock().unwrap_or_else(|e| e.into_inner());
            let summary = agent.tick(&client, &mut store, now);
            if let Err(e) = host.run_to_quiescence(&mut store, now) {
                tracing::warn!(error = %e, "operator did not settle");
            }
            if let Some(p) = &args.state {
                save_state(p, &store)?;
            }
            match output {
                OutputFormat::Json => {
                    println!("{}", serde_json::to_string(&summary).unwrap_or_default())
                }
                OutputFormat::Text => {
                    let s = &summary;
                    println!(
                        "t={} synced={} created={} updated={} pruned={} reconciled={} sent={} errors={}",
                        s.now,
                        s.synced,
                        s.sync.created,
                        s.sync.updated,
                        s.sync.pruned,
                        s.reconciled,
                        s.reports_sent,
                        s.errors.len()
                    );
                }
            }
            for e in &summary.errors {
                tracing::warn!(error = %e, "tick error");
            }
            let mut wake = agent.next_wake();
            if let Some(h) = host.next_due() {
                wake = wake.min(h);
            }
            wake
        };
        if args.once {
            return Ok(());
        }
        let target = Duration::from_secs(wake.max(now + 1));
        while start.elapsed() < target {
            if stop.load(Ordering::Relaxed) {
                eprintln!("stopping; cluster state left as is");
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}
