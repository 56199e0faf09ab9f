mod admin;
mod error;
mod output;
mod run;
mod sim;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use razorcd::net::HttpClient;
use razorcd::operator::build_operator_bundle;

use crate::admin::{AlertCmd, ChannelCmd, ClusterCmd, Ctx, SubscriptionCmd};
use crate::error::CliError;
use crate::output::OutputFormat;
use crate::run::AgentRunArgs;
use crate::sim::SimCmd;

/// Pull-based multi-cluster continuous deployment.
#[derive(Debug, Parser)]
#[command(name = "razorcd", version)]
struct Cli {
    /// Control-plane base URL.
    #[arg(long, global = true, env = "RAZORCD_URL")]
    url: Option<String>,
    #[arg(long, global = true, env = "RAZORCD_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, global = true, env = "RAZORCD_USER_ID")]
    user_id: Option<String>,
    #[arg(long, global = true, env = "RAZORCD_ORG_KEY", hide_env_values = true)]
    org_key: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    output: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the control plane.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a cluster agent.
    Agent {
        #[command(subcommand)]
        cmd: AgentCmd,
    },
    /// Generate deployable bundles.
    Bundle {
        #[command(subcommand)]
        cmd: BundleCmd,
    },
    /// Manage channels and upload versions.
    Channel {
        #[command(subcommand)]
        cmd: ChannelCmd,
    },
    /// Manage subscriptions and flip their versions.
    Subscription {
        #[command(subcommand)]
        cmd: SubscriptionCmd,
    },
    /// Inspect registered clusters and their reported resources.
    Cluster {
        #[command(subcommand)]
        cmd: ClusterCmd,
    },
    /// Manage alert rules and list firings.
    Alert {
        #[command(subcommand)]
        cmd: AlertCmd,
    },
    /// Deterministic rollout simulation.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
}

#[derive(Debug, Subcommand)]
enum AgentCmd {
    Run(AgentRunArgs),
}

#[derive(Debug, Subcommand)]
enum BundleCmd {
    /// The Nginx operator bundle: CRD, RBAC, Deployment and metrics Service.
    Operator {
        #[arg(long)]
        version: String,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
}

const DEFAULT_URL: &str = "http://127.0.0.1:8081";

fn admin_ctx(cli: &Cli) -> Ctx {
    let mut client = HttpClient::new(cli.url.as_deref().unwrap_or(DEFAULT_URL));
    if let (Some(k), Some(u)) = (&cli.api_key, &cli.user_id) {
        client = client.with_admin(k, u);
    }
    if let Some(o) = &cli.org_key {
        client = client.with_org_key(o);
    }
    Ctx {
        client,
        output: cli.output,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = admin_ctx(&cli);
    match cli.command {
        Command::Serve { config } => run::serve(&config),
        Command::Agent {
            cmd: AgentCmd::Run(args),
        } => run::agent(args, cli.url.as_deref(), cli.output),
        Command::Bundle {
            cmd: BundleCmd::Operator { version, out },
        } => {
            let bytes = build_operator_bundle(&version);
            match out {
                Some(p) => std::fs::write(&p, bytes)
                    .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", p.display()))),
                None => {
                    print!("{}", String::from_utf8_lossy(&bytes));
                    Ok(())
                }
            }
        }
        Command::Channel { cmd } => admin::channel(&ctx, cmd),
        Command::Subscription { cmd } => admin::subscription(&ctx, cmd),
        Command::Cluster { cmd } => admin::cluster(&ctx, cmd),
        Command::Alert { cmd } => admin::alert(&ctx, cmd),
        Command::Sim { cmd } => sim::run(cmd, cli.output),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("RAZORCD_LOG")
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let json = cli.output == OutputFormat::Json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Api {
                body: Some(body), ..
            } = &e
            {
                if json {
                    println!("{body}");
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
