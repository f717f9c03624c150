use std::path::PathBuf;

use aios_cli::{init_tracing, until_signal};
use aios_core::node::{DhtSection, NodeConfig, RunningNode};
use anyhow::Context;
use clap::Parser;
use serde_json::json;

/// Runs one agent node.
#[derive(Parser, Debug)]
#[command(name = "aios-node", version)]
struct Args {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// HTTP address for `/rpc`.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    advertise: Option<String>,
    /// Registry address; repeatable.
    #[arg(long = "registry")]
    registries: Vec<String>,
    /// UDP address for the DHT.
    #[arg(long)]
    dht: Option<String>,
    /// DHT bootstrap address; repeatable.
    #[arg(long = "bootstrap")]
    bootstrap: Vec<String>,
    /// UDP address for gossip.
    #[arg(long)]
    gossip: Option<String>,
    /// Gossip seed address; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<String>,
    /// Built-in agents to host, comma separated.
    #[arg(long, value_delimiter = ',')]
    agents: Vec<String>,
    #[arg(long)]
    standalone: bool,
}

fn config(args: &Args) -> anyhow::Result<NodeConfig> {
    let mut cfg = match &args.config {
        Some(p) => NodeConfig::load(p)?,
        None => {
            let mut c = NodeConfig::new(args.name.clone().unwrap_or_else(|| "aios-node".into()));
            c.standalone = false;
            c
        }
    };
    if let Some(n) = &args.name {
        cfg.node_name = n.clone();
    }
    if let Some(l) = &args.listen {
        cfg.listen = l.clone();
    }
    if args.advertise.is_some() {
        cfg.advertise = args.advertise.clone();
    }
    if !args.registries.is_empty() {
        cfg.registries = args.registries.clone();
        cfg.standalone = false;
    }
    if let Some(d) = &args.dht {
        cfg.dht = Some(DhtSection { listen: d.clone(), bootstrap: args.bootstrap.clone() });
    } else if !args.bootstrap.is_empty() {
        anyhow::bail!("--bootstrap needs --dht");
    }
    if let Some(g) = &args.gossip {
        let (host, port) = g.rsplit_once(':').context("--gossip wants host:port")?;
        let port: u16 = port.parse().context("--gossip port")?;
        cfg.p2p = Some(json!({
            "node_id": cfg.node_id(),
            "gossip": {"host": host, "port": port, "seed_nodes": args.seeds},
        }));
    } else if !args.seeds.is_empty() {
        anyhow::bail!("--seed needs --gossip");
    }
    if !args.agents.is_empty() {
        cfg.agents = args.agents.clone();
    }
    cfg.standalone |= args.standalone;
    cfg.validate()?;
    Ok(cfg)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_tracing("info");
    let args = Args::parse();
    let cfg = config(&args)?;
    let node = RunningNode::start(&cfg).await?;
    println!("{} listening on {}", node.node().node_id(), node.http_addr());
    if let Some(d) = node.dht_addr() {
        println!("dht on {d}");
    }
    if let Some(g) = node.gossip_addr() {
        println!("gossip on {g}");
    }
    let mut requested = node.shutdown_requested();
    until_signal(requested.wait()).await;
    let report = node.stop().await;
    println!("stopped: drained={} failed_tasks={}", report.drained, report.failed_tasks);
    Ok(())
}
