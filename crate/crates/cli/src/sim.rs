use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use razorcd::hash::to_canonical_string;
use razorcd::sim::{
    compare_models, run_e2e_scenario, run_pull_rollout, run_push_rollout, ExecMode, Scenario,
    SimConfig, SimError, DEFAULT_SWEEP,
};

use crate::error::CliError;
use crate::output::OutputFormat;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Model {
    Pull,
    Push,
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// One rollout: publish 1.0, flip to 2.0, run until converged.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Model::Pull)]
        model: Model,
        /// Step clusters one at a time instead of on the thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Pull against push over a sweep of cluster counts.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated cluster counts.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
    },
    /// Scripted end-to-end flow, or `all`.
    Scenario { name: String },
}

fn load(config: Option<PathBuf>) -> Result<SimConfig, CliError> {
    match config {
        Some(p) => SimConfig::load(&p).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(SimConfig::default()),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::InvalidConfig(m) => CliError::Config(format!("invalid sim config: {m}")),
        other => CliError::Domain(other.to_string()),
    }
}

pub fn run(cmd: SimCmd, output: OutputFormat) -> Result<(), CliError> {
    match cmd {
        SimCmd::Run {
            config,
            model,
            sequential,
        } => {
            let mut cfg = load(config)?;
            if sequential {
                cfg.exec = ExecMode::Sequential;
            }
            let result = match model {
                Model::Pull => run_pull_rollout(&cfg),
                Model::Push => run_push_rollout(&cfg),
            };
            let (report, failed) = match result {
                Ok(r) => (r, None),
                Err(SimError::HorizonExceeded(r)) => {
                    let msg = format!("horizon exceeded at t={}", r.end_time);
                    (*r, Some(msg))
                }
                Err(e) => return Err(sim_err(e)),
            };
            match output {
                OutputFormat::Json => println!("{}", to_canonical_string(&report)),
                OutputFormat::Text => print!("{}", report.to_text()),
            }
            failed.map_or(Ok(()), |m| Err(CliError::Domain(m)))
        }
        SimCmd::Compare { config, sweep } => {
            let cfg = load(config)?;
            let sweep = sweep.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            let table = compare_models(&cfg, &sweep).map_err(sim_err)?;
            match output {
                OutputFormat::Json => println!("{}", to_canonical_string(&table)),
                OutputFormat::Text => print!("{}", table.to_text()),
            }
            let mut failures = Vec::new();
            if !table.pull_flat() {
                failures.push(format!(
                    "pull times vary by more than {}",
                    table.poll_interval
                ));
            }
            if !table.push_linear() {
                failures.push("push times do not follow ceil(N/k)*c".to_string());
            }
            if failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Domain(failures.join("; ")))
            }
        }
        SimCmd::Scenario { name } => {
            let scenarios: Vec<Scenario> = if name == "all" {
                Scenario::ALL.to_vec()
            } else {
                vec![name
                    .parse()
                    .map_err(|e: SimError| CliError::Usage(e.to_string()))?]
            };
            let mut failed = Vec::new();
            for s in scenarios {
                match run_e2e_scenario(s) {
                    Ok(r) => match output {
                        OutputFormat::Json => println!("{}", to_canonical_string(&r)),
                        OutputFormat::Text => {
                            for c in &r.checks {
                                println!(
                                    "{s}  {}  {}  {}",
                                    if c.passed { "ok" } else { "FAIL" },
                                    c.name,
                                    c.detail
                                );
                            }
                            println!("{s}  PASS  digest={}", r.trace_digest);
                        }
                    },
                    Err(e) => {
                        println!("{s}  FAIL  {e}");
                        failed.push(s.to_string());
                    }
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Domain(format!(
                    "scenarios failed: {}",
                    failed.join(", ")
                )))
            }
        }
    }
}
