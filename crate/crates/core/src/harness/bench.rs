//! Load and registration benchmarks.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::network::spawn_network_with;
use super::scenario::{ScenarioSpec, Topology};
use super::HarnessError;
use crate::dht::AgentLookup;
use crate::node::{builtin, AgentDescriptor, AgentNode, EchoAgent, NodeParts};
use crate::rpc::{LoopbackNetwork, RpcHandler, RpcTransport};
use crate::wire::{methods, HumanTaskParams, HumanTaskResult, RpcRequest, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub id: String,
    pub latency_s: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub total_requests: usize,
    pub concurrency: usize,
    pub success_count: usize,
    pub failure_count: usize,
    pub avg_latency_s: f64,
    pub p95_latency_s: f64,
    pub throughput_req_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

impl BenchReport {
    pub fn success_rate(&self) -> f64 {
        if self.total_requests == 0 {
            return 1.0;
        }
        self.success_count as f64 / self.total_requests as f64
    }
}

/// Nearest-rank percentile of an unsorted sample; 0 when empty.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

pub const ECHO_RECIPIENT: &str = "example/echo_agent";

async fn one_request(transport: &dyn RpcTransport, target: &str, i: usize) -> TraceEntry {
    let id = format!("bench-{i}");
    let text = format!("ping {i}");
    let req = RpcRequest::with(
        id.clone(),
        methods::DELEGATE_TASK,
        &HumanTaskParams::ask("bench/client", ECHO_RECIPIENT, text.clone(), 256),
    );
    let start = Instant::now();
    let resp = transport.call(target, &req, 0).await;
    let latency_s = start.elapsed().as_secs_f64();
    let ok = match resp {
        Ok(r) if r.id == id => match r.result_as::<HumanTaskResult>() {
            Ok(res) => res.stop_reason == StopReason::EndTurn && res.content.text == text,
            Err(_) => false,
        },
        _ => false,
    };
    TraceEntry { id, latency_s, ok }
}

/// Sends `total` echo tasks to `target`, keeping `concurrency` in flight.
/// Failures are counted, never raised.
pub async fn bench_comm(
    transport: Arc<dyn RpcTransport>,
    target: &str,
    total: usize,
    concurrency: usize,
    label: &str,
    keep_trace: bool,
) -> BenchReport {
    let started = Instant::now();
    let mut trace: Vec<TraceEntry> = stream::iter(0..total)
        .map(|i| {
            let t = Arc::clone(&transport);
            async move { one_request(t.as_ref(), target, i).await }
        })
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;
    let wall = started.elapsed().as_secs_f64();
    trace.sort_by_key(|e| e.id.trim_start_matches("bench-").parse::<usize>().unwrap_or(0));
    let ok: Vec<f64> = trace.iter().filter(|e| e.ok).map(|e| e.latency_s).collect();
    let all: Vec<f64> = trace.iter().map(|e| e.latency_s).collect();
    BenchReport {
        label: label.to_string(),
        total_requests: total,
        concurrency,
        success_count: ok.len(),
        failure_count: total - ok.len(),
        avg_latency_s: if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 },
        p95_latency_s: percentile(&all, 95.0),
        throughput_req_s: if wall > 0.0 { total as f64 / wall } else { 0.0 },
        trace: keep_trace.then_some(trace),
    }
}

/// A standalone node hosting echo_agent, reachable on the loopback at the
/// returned address.
pub fn loopback_echo_node() -> (Arc<LoopbackNetwork>, Arc<AgentNode>, String) {
    let net = LoopbackNetwork::new();
    let addr = "bench-node.sim:9000".to_string();
    let node = AgentNode::new(NodeParts::new("bench-node", addr.clone(), net.transport(Duration::from_secs(5))));
    let handler: Arc<dyn RpcHandler> = node.clone();
    net.bind(addr.clone(), &handler);
    (net, node, addr)
}

/// [`bench_comm`] against a fresh [`loopback_echo_node`].
pub async fn bench_comm_loopback(total: usize, concurrency: usize) -> BenchReport {
    let (net, node, addr) = loopback_echo_node();
    node.register_local_agent(builtin("echo_agent").expect("echo_agent is built in"))
        .await
        .expect("fresh node has no conflicts");
    let report = bench_comm(net.transport(Duration::from_secs(5)), &addr, total, concurrency, "Local", false).await;
    node.shutdown(Duration::from_millis(100)).await;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationBench {
    pub nodes: usize,
    pub avg_ms: f64,
    pub max_ms: f64,
    pub all_registered: bool,
}

/// For each `n`: spawns `n` in-process nodes and one registry, registers one
/// agent per node and times each until the registry lists it and another
/// node resolves it through the DHT.
pub async fn bench_registration(counts: &[usize], deadline: Duration) -> Result<Vec<RegistrationBench>, HarnessError> {
    if counts.is_empty() {
        return Err(HarnessError::Spec("need at least one node count".into()));
    }
    let mut out = Vec::new();
    for &n in counts {
        let spec = ScenarioSpec::new(n, 1, Topology::FullBootstrap, n as u64);
        let net = spawn_network_with(&spec, &|_| Vec::new()).await?;
        let registry = Arc::clone(&net.registries()[0]);
        let nodes = net.nodes();
        let mut samples = Vec::new();
        let mut complete = true;
        for (i, node) in nodes.iter().enumerate() {
            let agent_id = format!("bench/agent_{i}");
            let desc = AgentDescriptor::new(&agent_id, vec!["echo".into()], Arc::new(EchoAgent))
                .map_err(|v| HarnessError::Spawn(v.to_string()))?;
            let observer = &nodes[(i + 1) % n];
            let start = Instant::now();
            node.register_local_agent(desc).await.map_err(|e| HarnessError::Spawn(e.to_string()))?;
            let visible = loop {
                let in_registry = registry.lookup_agent(&agent_id).iter().any(|h| h.node_id == node.node_id());
                let in_dht = match observer.dht() {
                    Some(d) => matches!(d.find_agent(&agent_id).await, Ok(AgentLookup::Found(_))),
                    None => false,
                };
                if in_registry && in_dht {
                    break true;
                }
                if start.elapsed() > deadline {
                    break false;
                }
                tokio::time::sleep(Duration::from_millis(1)).await;
            };
            samples.push(start.elapsed().as_secs_f64() * 1e3);
            complete &= visible;
        }
        net.teardown().await;
        out.push(RegistrationBench {
            nodes: n,
            avg_ms: samples.iter().sum::<f64>() / samples.len().max(1) as f64,
            max_ms: samples.iter().cloned().fold(0.0, f64::max),
            all_registered: complete,
        });
    }
    Ok(out)
}

/// Environment, requests, concurrency, success rate, latencies, throughput.
pub fn render_comm_table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>9} {:>12} {:>8} {:>17} {:>9} {:>19}",
        "Environment", "Requests", "Concurrency", "Success", "Avg. Latency (s)", "P95 (s)", "Throughput (req/s)"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>9} {:>12} {:>7.0}% {:>17.3} {:>9.3} {:>19.1}",
            r.label,
            r.total_requests,
            r.concurrency,
            r.success_rate() * 100.0,
            r.avg_latency_s,
            r.p95_latency_s,
            r.throughput_req_s
        );
    }
    s
}

pub fn render_registration_table(rows: &[RegistrationBench]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6} {:>10} {:>10} {:>15}", "Nodes", "Avg (ms)", "Max (ms)", "All registered");
    for r in rows {
        let _ = writeln!(s, "{:>6} {:>10.3} {:>10.3} {:>15}", r.nodes, r.avg_ms, r.max_ms, r.all_registered);
    }
    s
}

/// One JSON object per line.
pub fn json_lines<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("reports serialize") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 95.0), 95.0);
        assert_eq!(percentile(&xs, 100.0), 100.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        assert_eq!(percentile(&[], 95.0), 0.0);
        assert_eq!(percentile(&[5.0, 1.0, 4.0, 2.0, 3.0], 50.0), 3.0);
    }

    #[tokio::test]
    async fn every_request_answered() {
        let r = bench_comm_loopback(50, 5).await;
        assert_eq!(r.success_count, 50);
        assert_eq!(r.success_count + r.failure_count, r.total_requests);
        assert!(r.p95_latency_s >= 0.0 && r.throughput_req_s > 0.0);
    }

    #[tokio::test]
    async fn unreachable_target_counts_failures() {
        let net = LoopbackNetwork::new();
        let r = bench_comm(net.transport(Duration::from_millis(50)), "nowhere:1", 10, 2, "Local", true).await;
        assert_eq!(r.success_count, 0);
        assert_eq!(r.failure_count, 10);
        assert_eq!(r.trace.as_ref().unwrap().len(), 10);
    }

    #[tokio::test]
    async fn single_node_registration_has_one_sample() {
        let rows = bench_registration(&[1, 3], Duration::from_secs(2)).await.unwrap();
        assert_eq!(rows[0].avg_ms, rows[0].max_ms);
        assert!(rows.iter().all(|r| r.all_registered));
    }

    #[test]
    fn renders_rows() {
        let r = BenchReport {
            label: "Local".into(),
            total_requests: 50,
            concurrency: 5,
            success_count: 50,
            failure_count: 0,
            avg_latency_s: 0.061,
            p95_latency_s: 0.09,
            throughput_req_s: 81.2,
            trace: None,
        };
        let table = render_comm_table(std::slice::from_ref(&r));
        assert!(table.lines().nth(1).unwrap().contains("100%"));
        let line = json_lines(&[r]);
        assert!(line.starts_with("{\"label\":\"Local\"") && line.ends_with("}\n"));
    }
}
