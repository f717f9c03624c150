use std::path::PathBuf;

use aios_cli::{init_tracing, until_signal};
use aios_core::registry::{RegistryConfig, RunningRegistry};
use clap::Parser;

/// Runs one registry.
#[derive(Parser, Debug)]
#[command(name = "aios-registry", version)]
struct Args {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    advertise: Option<String>,
    /// Peer registry address; repeatable.
    #[arg(long = "peer")]
    peers: Vec<String>,
    /// Agent id to refuse; repeatable.
    #[arg(long = "deny")]
    denylist: Vec<String>,
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Static dashboard bundle served under `/ui`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long)]
    report_period_ms: Option<u64>,
}

fn config(args: &Args) -> anyhow::Result<RegistryConfig> {
    let mut cfg = match &args.config {
        Some(p) => RegistryConfig::load(p)?,
        None => RegistryConfig::default(),
    };
    if let Some(v) = &args.id {
        cfg.registry_id = v.clone();
    }
    if let Some(v) = &args.listen {
        cfg.listen = v.clone();
    }
    if args.advertise.is_some() {
        cfg.advertise = args.advertise.clone();
    }
    cfg.peers.extend(args.peers.iter().cloned());
    cfg.denylist.extend(args.denylist.iter().cloned());
    if args.snapshot.is_some() {
        cfg.snapshot_path = args.snapshot.clone();
    }
    if args.ui_dir.is_some() {
        cfg.ui_dir = args.ui_dir.clone();
    }
    if let Some(p) = args.report_period_ms {
        cfg.report_period_ms = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_tracing("info");
    let cfg = config(&Args::parse())?;
    let registry = RunningRegistry::start(&cfg).await?;
    println!("{} listening on {}", cfg.registry_id, registry.addr());
    until_signal(std::future::pending::<()>()).await;
    registry.stop().await;
    println!("stopped");
    Ok(())
}
