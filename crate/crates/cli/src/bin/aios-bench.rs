use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use aios_cli::{init_tracing, write_out};
use aios_core::harness::{
    bench_comm, bench_comm_loopback, bench_registration, json_lines, render_comm_table, render_registration_table,
    run_convergence, run_dht_trials, spawn_network, ClockMode, ScenarioSpec, Topology,
};
use aios_core::rpc::HttpTransport;
use aios_core::wire::schema::export_all;
use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

/// Benchmarks, simulations and network spawning.
#[derive(Parser, Debug)]
#[command(name = "aios-bench", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Echo-task load against one node.
    Comm {
        /// `host:port` of a running node, or `local` for an in-process one.
        #[arg(long, default_value = "local")]
        target: String,
        #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
        requests: Vec<usize>,
        /// Paired with `--requests` by position.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        concurrency: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Registration latency for in-process networks of each size.
    Reg {
        #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
        nodes: Vec<usize>,
        #[arg(long, default_value_t = 5_000)]
        deadline_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gossip coverage per round on the simulated network.
    Converge {
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        registrations: usize,
        #[arg(long, default_value = "full-bootstrap")]
        topology: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Store/lookup trials on simulated DHTs.
    Dht {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        nodes: Vec<usize>,
        #[arg(long, default_value_t = 1_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spawns the network a scenario file describes and runs it.
    Spawn {
        #[arg(long)]
        spec: PathBuf,
        /// How long to run before teardown (ctrl-c also stops it).
        #[arg(long, default_value_t = 10_000)]
        duration_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes the JSON-Schema files for every wire shape.
    Schemas {
        #[arg(long, default_value = "fixtures/schemas")]
        dir: PathBuf,
    },
}

fn topology(s: &str) -> anyhow::Result<Topology> {
    serde_json::from_value(serde_json::Value::String(s.into())).with_context(|| format!("unknown topology {s:?}"))
}

async fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Comm { target, requests, concurrency, reps, label, trace, out } => {
            if requests.len() != concurrency.len() {
                bail!("--requests and --concurrency need the same number of entries");
            }
            let mut reports = Vec::new();
            for (&total, &conc) in requests.iter().zip(&concurrency) {
                for _ in 0..reps.max(1) {
                    let mut r = if target == "local" {
                        bench_comm_loopback(total, conc).await
                    } else {
                        let t = Arc::new(HttpTransport::new(Duration::from_secs(10)));
                        bench_comm(t, &target, total, conc, "Remote", trace).await
                    };
                    if let Some(l) = &label {
                        r.label = l.clone();
                    }
                    reports.push(r);
                }
            }
            print!("{}", render_comm_table(&reports));
            write_out(out.as_deref(), &json_lines(&reports))
        }
        Cmd::Reg { nodes, deadline_ms, out } => {
            let rows = bench_registration(&nodes, Duration::from_millis(deadline_ms)).await?;
            print!("{}", render_registration_table(&rows));
            write_out(out.as_deref(), &json_lines(&rows))
        }
        Cmd::Converge { nodes, rounds, seed, registrations, topology: t, out } => {
            let spec = ScenarioSpec::new(nodes, 0, topology(&t)?, seed);
            let report = run_convergence(&spec, registrations, rounds)?;
            println!("{:>5} {:>9}", "Round", "Coverage");
            for (i, c) in report.coverage.iter().enumerate() {
                println!("{i:>5} {c:>9.3}");
            }
            println!("log digest {}", report.log_digest);
            write_out(out.as_deref(), &json_lines(&[report]))
        }
        Cmd::Dht { nodes, trials, seed, out } => {
            let mut rows = Vec::new();
            println!(
                "{:>5} {:>7} {:>6} {:>7} {:>8} {:>11} {:>10}",
                "Nodes", "Trials", "Bound", "Found", "Within", "Exact k", "Max rnds"
            );
            for n in nodes {
                let r = run_dht_trials(n, trials, seed).await?;
                println!(
                    "{:>5} {:>7} {:>6} {:>7} {:>8} {:>11} {:>10}",
                    r.n, r.trials, r.round_bound, r.found, r.within_bound, r.closest_exact, r.max_rounds
                );
                rows.push(r);
            }
            write_out(out.as_deref(), &json_lines(&rows))
        }
        Cmd::Spawn { spec, duration_ms, out } => {
            let spec = ScenarioSpec::load(&spec)?;
            let mut net = spawn_network(&spec).await?;
            for (i, a) in net.registry_addrs().iter().enumerate() {
                println!("registry-{i} {a}");
            }
            for (i, a) in net.node_addrs().iter().enumerate() {
                println!("node-{i} {a}");
            }
            let run = Duration::from_millis(duration_ms);
            if spec.clock == ClockMode::Simulated {
                net.advance(run).await?;
            } else if spec.sockets {
                aios_cli::until_signal(tokio::time::sleep(run)).await;
            } else {
                tokio::select! {
                    r = net.advance(run) => r?,
                    _ = tokio::signal::ctrl_c() => {}
                }
            }
            let mut summary = Vec::new();
            for reg in net.registries() {
                let snap = reg.list_nodes();
                for n in &snap.nodes {
                    println!("{} {} {:?} agents={:?}", reg.id(), n.report.node_id, n.health, n.report.available_agents);
                }
                summary.push(
                    serde_json::json!({"registry": reg.id(), "fingerprint": reg.fingerprint(), "snapshot": snap}),
                );
            }
            print!("{}", net.log());
            write_out(out.as_deref(), &json_lines(&summary))?;
            net.teardown().await;
            Ok(())
        }
        Cmd::Schemas { dir } => {
            for p in export_all(&dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_tracing("warn");
    run(Args::parse().cmd).await
}
