//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::time::{Duration, Instant};

use aios_core::gossip::fanout_targets;
use aios_core::harness::{
    bench_comm_loopback, bench_registration, run_convergence_with, run_dht_trials, spawn_network_with, GossipSimConfig,
    Network, ScenarioSpec, Topology,
};
use aios_core::node::builtin;
use aios_core::registry::{HealthPolicy, RegistryState};
use aios_core::wire::{
    self, golden_corpus, methods, AgentMetadata, DelegationResult, DelegationStatus, Health, HumanTaskParams,
    HumanTaskResult, NodeStatusReport, RegisterNodeParams, RegistrySnapshot, RpcRequest, SystemInfo,
};
use aios_core::Timestamp;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- golden wire

/// Field paths of every reference document, in order.
const DOCUMENT_FIELDS: [(&str, &str); 7] = [
    ("human_request", "jsonrpc id method params params.sender params.sender.id params.recipient params.recipient.id params.recipient.role params.messages params.messages[].role params.messages[].content params.messages[].content.type params.messages[].content.text params.maxTokens"),
    ("human_response", "jsonrpc id result result.sender result.sender.id result.sender.role result.recipient result.recipient.id result.content result.content.type result.content.text result.model result.stopReason"),
    ("delegation_request", "jsonrpc id method params params.intent params.sender params.sender.id params.sender.role params.recipient params.recipient.id params.recipient.role params.task params.task.name params.task.arguments params.task.arguments.dataset params.task.arguments.features"),
    ("delegation_response", "jsonrpc id result result.sender result.sender.id result.sender.role result.recipient result.recipient.id result.recipient.role result.content result.content.task result.content.status result.content.output result.content.output.mean result.content.output.std result.content.output.sample_size result.isError"),
    ("node_status_report", "node_id node_name timestamp system_info system_info.cpu_percent system_info.memory_percent system_info.platform available_agents"),
    ("task_assignment", "task_id assigned_agent status"),
    ("agent_metadata", "agent_id description last_seen"),
];

fn field_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                if !out.contains(&p) {
                    out.push(p.clone());
                }
                field_paths(x, &p, out);
            }
        }
        Value::Array(items) => items.iter().for_each(|x| field_paths(x, &format!("{prefix}[]"), out)),
        _ => {}
    }
}

async fn golden_wire() -> Check {
    let corpus = golden_corpus();
    ensure(corpus.len() == 7, || format!("{} documents, expected 7", corpus.len()))?;
    for (name, fields) in DOCUMENT_FIELDS {
        let entry = corpus.iter().find(|e| e.name == name).ok_or(format!("{name} missing"))?;
        let original: Value = serde_json::from_slice(entry.bytes).map_err(|e| format!("{name}: {e}"))?;
        let doc = wire::decode_document(entry.bytes).map_err(|e| format!("{name}: decode: {e}"))?;
        let once = doc.encode().map_err(|e| format!("{name}: encode: {e}"))?;
        let twice = wire::decode_document(&once).and_then(|d| d.encode()).map_err(|e| format!("{name}: {e}"))?;
        ensure(once == twice, || format!("{name}: re-encoding is not byte-stable"))?;
        ensure(once == serde_json::to_vec(&original).unwrap(), || {
            format!("{name}: encoding differs from the fixture")
        })?;
        let mut got = Vec::new();
        field_paths(&serde_json::from_slice(&once).unwrap(), "", &mut got);
        let want: Vec<String> = fields.split(' ').map(str::to_string).collect();
        ensure(got == want, || format!("{name}: fields {got:?}, expected {want:?}"))?;
    }
    Ok("7 documents decode, re-encode byte-stably, field names and order intact".into())
}

// ------------------------------------------------------- response completeness

async fn response_completeness() -> Check {
    let mut worst = (0.0f64, 0.0f64);
    for (total, conc) in [(50, 5), (100, 10), (200, 20)] {
        for rep in 0..5 {
            let r = bench_comm_loopback(total, conc).await;
            ensure(r.success_count == total && r.failure_count == 0, || {
                format!("({total},{conc}) rep {rep}: {}/{total} succeeded", r.success_count)
            })?;
            ensure(r.avg_latency_s < 0.5, || format!("({total},{conc}) rep {rep}: avg {:.3}s", r.avg_latency_s))?;
            ensure(r.p95_latency_s < 1.0, || format!("({total},{conc}) rep {rep}: p95 {:.3}s", r.p95_latency_s))?;
            worst = (worst.0.max(r.avg_latency_s), worst.1.max(r.p95_latency_s));
        }
    }
    Ok(format!("3 configs x 5 reps at 100% success; worst avg {:.4}s, worst p95 {:.4}s", worst.0, worst.1))
}

// --------------------------------------------------------- registration latency

async fn registration_latency() -> Check {
    let rows = bench_registration(&[3, 5, 7], Duration::from_secs(5)).await.map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for r in &rows {
        ensure(r.all_registered, || format!("n={}: not all registered", r.nodes))?;
        ensure(r.avg_ms <= 50.0, || format!("n={}: avg {:.2} ms", r.nodes, r.avg_ms))?;
        ensure(r.max_ms <= 200.0, || format!("n={}: max {:.2} ms", r.nodes, r.max_ms))?;
        parts.push(format!("n={} avg {:.2} ms max {:.2} ms", r.nodes, r.avg_ms, r.max_ms));
    }
    Ok(parts.join("; "))
}

// ------------------------------------------------------------- DHT correctness

async fn dht_correctness() -> Check {
    let mut parts = Vec::new();
    for n in [8usize, 16, 32, 64] {
        let r = run_dht_trials(n, 1000, n as u64).await.map_err(|e| e.to_string())?;
        ensure(r.within_bound * 100 >= r.trials * 99, || {
            format!("n={n}: {}/{} lookups within {} rounds", r.within_bound, r.trials, r.round_bound)
        })?;
        ensure(r.closest_exact == r.trials, || {
            format!("n={n}: closest set matched oracle {}/{}", r.closest_exact, r.trials)
        })?;
        parts.push(format!("n={n} {}/{} <= {} rounds (max {})", r.within_bound, r.trials, r.round_bound, r.max_rounds));
    }
    Ok(parts.join("; "))
}

// ----------------------------------------------------------- gossip properties

async fn gossip_properties() -> Check {
    for n in 0..=10_000usize {
        let expected = n.min(3.max((n as f64).sqrt().floor() as usize));
        ensure(fanout_targets(n) == expected, || {
            format!("fanout_targets({n}) = {}, expected {expected}", fanout_targets(n))
        })?;
    }
    let mut worst_round = 0;
    let (mut sent, mut dups) = (0u64, 0u64);
    for seed in 0..30u64 {
        let spec = ScenarioSpec::new(20, 1, Topology::StarViaRegistry, seed);
        let clean = GossipSimConfig::default();
        let noisy = GossipSimConfig { duplicate_rate: 0.3, ..GossipSimConfig::default() };
        for (label, cfg) in [("clean", clean), ("duplicating", noisy)] {
            let (r, _) = run_convergence_with(&spec, 1, 10, cfg).map_err(|e| e.to_string())?;
            ensure(r.stats.ttl_violations == 0, || {
                format!("seed {seed} {label}: {} ttl<=0 sends", r.stats.ttl_violations)
            })?;
            ensure(r.stats.double_applies == 0, || {
                format!("seed {seed} {label}: {} double applies", r.stats.double_applies)
            })?;
            sent += r.stats.sent;
            dups += r.stats.duplicate_receipts;
            if label == "clean" {
                let round = r.rounds_to(0.99).filter(|&k| k <= 10);
                let round = round.ok_or_else(|| format!("seed {seed}: coverage {:?}", r.min_coverage))?;
                worst_round = worst_round.max(round);
            }
        }
    }
    Ok(format!(
        "fanout matches 0..=10000; 60 runs, {sent} sends, {dups} duplicate receipts, no ttl<=0, no double apply; \
         >=99% coverage by round {worst_round} in all 30 seeds"
    ))
}

// ----------------------------------------------------------- workflow ordering

async fn star() -> Result<Network, String> {
    let spec = ScenarioSpec::new(3, 1, Topology::StarViaRegistry, 5);
    let names = ["echo_agent", "math_agent", "stats_agent"];
    spawn_network_with(&spec, &move |i| vec![builtin(names[i]).unwrap()]).await.map_err(|e| e.to_string())
}

async fn workflow_ordering() -> Check {
    let net = star().await?;
    let client = net.client_transport();
    let t = net.node_transport().unwrap();
    let dht = net.dht_network().unwrap();
    let node0 = net.node_addrs()[0].clone();

    t.reset();
    let dht_before = dht.calls();
    let req = RpcRequest::with("w1", methods::DELEGATE_TASK, &HumanTaskParams::ask("u", "echo_agent", "local", 64));
    let resp = client.call(&node0, &req, 0).await.map_err(|e| e.to_string())?;
    let r: HumanTaskResult = resp.result_as().map_err(|e| e.to_string())?;
    ensure(r.content.text == "local", || format!("echo returned {:?}", r.content.text))?;
    ensure(t.count() == 0 && dht.calls() == dht_before, || {
        format!("local task made {} rpc and {} dht calls", t.count(), dht.calls() - dht_before)
    })?;

    t.reset();
    let req = RpcRequest::with("w2", methods::DELEGATE_TASK, &HumanTaskParams::ask("u", "math_agent", "2+3*4", 64));
    let resp = client.call(&node0, &req, 0).await.map_err(|e| e.to_string())?;
    let r: HumanTaskResult = resp.result_as().map_err(|e| e.to_string())?;
    ensure(r.content.text == "14", || format!("math returned {:?}", r.content.text))?;
    let hops = t.count_method(methods::DELEGATE_TASK);
    ensure(hops == 1, || format!("remote task took {hops} delegation hops"))?;

    t.reset();
    let entry = golden_corpus().into_iter().find(|e| e.name == "delegation_request").unwrap();
    let req = wire::decode_request(entry.bytes).map_err(|e| e.to_string())?;
    let resp = client.call(&node0, &req, 0).await.map_err(|e| e.to_string())?;
    ensure(resp.id == req.id, || format!("response id {} for request {}", resp.id, req.id))?;
    let r: DelegationResult = resp.result_as().map_err(|e| e.to_string())?;
    let want = json!({"mean": 85.3, "std": 4.2, "sample_size": 500});
    ensure(r.content.status == DelegationStatus::Completed && Value::Object(r.content.output.clone()) == want, || {
        format!("stats output {:?}", r.content.output)
    })?;
    ensure(t.count_method(methods::DELEGATE_TASK) == 1, || "stats task took more than one hop".into())?;
    net.teardown().await;
    Ok("local: 0 rpc / 0 dht calls; remote: exactly 1 hop; stats {mean 85.3, std 4.2, sample_size 500}".into())
}

// ---------------------------------------------------------- registry invariants

const PERIOD: Duration = Duration::from_secs(5);

fn at(secs: i64) -> Timestamp {
    Timestamp::from_millis(1_700_000_000_000 + secs * 1000)
}

fn registration(node: &str, agents: &[String], now: Timestamp) -> RegisterNodeParams {
    RegisterNodeParams {
        report: NodeStatusReport {
            node_id: node.into(),
            node_name: node.into(),
            timestamp: now,
            system_info: SystemInfo { cpu_percent: 1.0, memory_percent: 2.0, platform: "Linux".into() },
            available_agents: agents.to_vec(),
        },
        address: format!("{node}:9000"),
        agents: agents.iter().map(|a| AgentMetadata::new(a.as_str(), vec!["t".into()], now)).collect(),
        location: None,
    }
}

/// Agents of every entry that is not offline, straight from the node list.
fn expected_index(snap: &RegistrySnapshot) -> BTreeMap<String, BTreeSet<String>> {
    let mut m: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in snap.nodes.iter().filter(|e| e.health != Health::Offline) {
        for a in &e.report.available_agents {
            m.entry(a.clone()).or_default().insert(e.report.node_id.clone());
        }
    }
    m
}

fn actual_index(snap: &RegistrySnapshot) -> BTreeMap<String, BTreeSet<String>> {
    snap.agents.iter().map(|a| (a.agent_id.clone(), a.node_ids.iter().cloned().collect())).collect()
}

#[derive(Debug, Clone)]
enum Op {
    Register { reg: usize, node: u8, agents: Vec<u8>, at: i64 },
    Sweep { reg: usize, at: i64 },
    Sync { from: usize, to: usize, at: i64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..2usize, 0..6u8, proptest::collection::vec(0..5u8, 0..4), 0..150i64)
            .prop_map(|(reg, node, agents, at)| Op::Register { reg, node, agents, at }),
        (0..2usize, 0..150i64).prop_map(|(reg, at)| Op::Sweep { reg, at }),
        (0..2usize, 0..2usize, 0..150i64).prop_map(|(from, to, at)| Op::Sync { from, to, at }),
    ]
}

fn index_property() -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&proptest::collection::vec(op(), 1..40), |ops| {
            let mut regs = [
                RegistryState::new(HealthPolicy::for_period(PERIOD), []),
                RegistryState::new(HealthPolicy::for_period(PERIOD), ["x/4".to_string()]),
            ];
            let mut now = 0;
            let mut versions = [0u64; 2];
            for op in ops {
                match op {
                    Op::Register { reg, node, agents, at: t } => {
                        now = now.max(t);
                        let ids: Vec<String> = agents.iter().map(|a| format!("x/{a}")).collect();
                        regs[reg].register_node(registration(&format!("n{node}"), &ids, at(now)), at(now)).unwrap();
                    }
                    Op::Sweep { reg, at: t } => {
                        now = now.max(t);
                        regs[reg].health_sweep(at(now));
                    }
                    Op::Sync { from, to, at: t } => {
                        now = now.max(t);
                        let snap = regs[from].snapshot();
                        regs[to].merge(&snap, at(now));
                    }
                }
                for (r, last) in regs.iter().zip(versions.iter_mut()) {
                    prop_assert!(r.version() >= *last);
                    *last = r.version();
                    let snap = r.snapshot();
                    prop_assert_eq!(actual_index(&snap), expected_index(&snap));
                }
                let denied = serde_json::to_string(&regs[1].snapshot()).unwrap();
                prop_assert!(!denied.contains("\"x/4\""));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn seeded_sync_converges(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regs = [
        RegistryState::new(HealthPolicy::for_period(PERIOD), []),
        RegistryState::new(HealthPolicy::for_period(PERIOD), []),
    ];
    let mut now = 0i64;
    for _ in 0..rng.gen_range(5..60) {
        now += rng.gen_range(0..8);
        let reg = rng.gen_range(0..2);
        match rng.gen_range(0..10) {
            0..=6 => {
                let node = format!("n{}", rng.gen_range(0..10));
                let agents: Vec<String> =
                    (0..rng.gen_range(0..4)).map(|_| format!("x/{}", rng.gen_range(0..8))).collect();
                regs[reg]
                    .register_node(registration(&node, &agents, at(now)), at(now))
                    .map_err(|v| format!("{v:?}"))?;
            }
            7 | 8 => {
                regs[reg].health_sweep(at(now));
            }
            _ => {
                let snap = regs[1 - reg].snapshot();
                regs[reg].merge(&snap, at(now));
            }
        }
    }
    let a = regs[0].snapshot();
    regs[1].merge(&a, at(now));
    let b = regs[1].snapshot();
    regs[0].merge(&b, at(now));
    let (fa, fb) = (regs[0].fingerprint(), regs[1].fingerprint());
    ensure(fa == fb, || format!("seed {seed}: fingerprints {fa} vs {fb}"))
}

async fn registry_invariants() -> Check {
    index_property()?;
    for seed in 0..100 {
        seeded_sync_converges(seed)?;
    }
    Ok("index and version monotonicity over 1000 sequences; 100/100 seeded two-registry syncs agree on fingerprint"
        .into())
}

// ------------------------------------------------------------------------ gate

async fn criterion<F: Future<Output = Check>>(name: &str, limit: Duration, f: F) -> bool {
    let start = Instant::now();
    let mut outcome = f.await;
    let took = start.elapsed();
    if outcome.is_ok() && took > limit {
        outcome = Err(format!("took {took:.1?}, limit {limit:?}"));
    }
    match &outcome {
        Ok(detail) => println!("PASS  {name:<24} {took:>10.2?}  {detail}"),
        Err(why) => println!("FAIL  {name:<24} {took:>10.2?}  {why}"),
    }
    outcome.is_ok()
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let results = rt.block_on(async {
        vec![
            criterion("golden wire", Duration::from_secs(1), golden_wire()).await,
            criterion("response completeness", Duration::from_secs(120), response_completeness()).await,
            criterion("registration latency", Duration::from_secs(60), registration_latency()).await,
            criterion("dht correctness", Duration::from_secs(120), dht_correctness()).await,
            criterion("gossip properties", Duration::from_secs(120), gossip_properties()).await,
            criterion("workflow ordering", Duration::from_secs(30), workflow_ordering()).await,
            criterion("registry invariants", Duration::from_secs(60), registry_invariants()).await,
        ]
    });
    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
