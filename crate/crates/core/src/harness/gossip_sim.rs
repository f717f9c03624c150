//! Discrete-event gossip simulation: every node is a sans-IO
//! [`GossipState`], every datagram an event on one seeded queue.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario::{node_name, FaultAction, FaultTarget, ScenarioSpec};
use super::HarnessError;
use crate::gossip::{GossipConfig, GossipState, MessageKey, Outgoing, Receipt, DEFAULT_PORT};
use crate::time::Timestamp;
use crate::wire::GossipMessage;

#[derive(Debug, Clone, PartialEq)]
pub struct GossipSimConfig {
    pub period: Duration,
    /// One-way delay, uniform in this range (milliseconds).
    pub latency_ms: (u64, u64),
    pub drop_rate: f64,
    /// Chance that a datagram is delivered twice.
    pub duplicate_rate: f64,
}

impl Default for GossipSimConfig {
    fn default() -> Self {
        GossipSimConfig { period: Duration::from_secs(1), latency_ms: (5, 50), drop_rate: 0.0, duplicate_rate: 0.0 }
    }
}

/// Counters a run must keep consistent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicates_injected: u64,
    pub duplicate_receipts: u64,
    /// Datagrams put on the wire with ttl 0.
    pub ttl_violations: u64,
    /// A message applied twice at one node.
    pub double_applies: u64,
}

#[derive(Debug)]
enum Event {
    Deliver { to: usize, from: usize, msg: GossipMessage },
    Tick { node: usize },
}

pub struct GossipSim {
    cfg: GossipSimConfig,
    nodes: Vec<GossipState>,
    addrs: Vec<String>,
    by_addr: HashMap<String, usize>,
    alive: Vec<bool>,
    side: Option<Vec<bool>>,
    queue: BinaryHeap<Reverse<(i64, u64)>>,
    events: HashMap<u64, Event>,
    seq: u64,
    now: i64,
    rng: ChaCha8Rng,
    applied: Vec<HashSet<MessageKey>>,
    stats: SimStats,
    log: String,
}

fn sim_addr(i: usize) -> String {
    format!("10.0.{}.{}:{DEFAULT_PORT}", i / 250, i % 250 + 1)
}

impl GossipSim {
    /// `n` nodes bootstrapped per `spec`'s topology.
    pub fn new(spec: &ScenarioSpec, cfg: GossipSimConfig) -> Result<Self, HarnessError> {
        spec.validate()?;
        let n = spec.node_count;
        let addrs: Vec<String> = (0..n).map(sim_addr).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let start = Timestamp::from_millis(0);
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let seeds = spec.seeds_of(i);
            let (host, _) = addrs[i].rsplit_once(':').expect("addr has port");
            let gcfg = GossipConfig::new(node_name(i), host, DEFAULT_PORT)
                .with_period(cfg.period)
                .with_seeds(seeds.into_iter().map(|s| addrs[s].clone()));
            nodes.push(GossipState::new(gcfg, rng.gen(), start).map_err(|e| HarnessError::Spec(e.to_string()))?);
        }
        let mut sim = GossipSim {
            by_addr: addrs.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect(),
            addrs,
            alive: vec![true; n],
            side: None,
            queue: BinaryHeap::new(),
            events: HashMap::new(),
            seq: 0,
            now: 0,
            applied: vec![HashSet::new(); n],
            stats: SimStats::default(),
            log: String::new(),
            nodes,
            rng,
            cfg,
        };
        let period = sim.period_us();
        for i in 0..n {
            let phase = sim.rng.gen_range(1..=period);
            sim.push(phase, Event::Tick { node: i });
        }
        Ok(sim)
    }

    fn period_us(&self) -> i64 {
        self.cfg.period.as_micros() as i64
    }

    fn push(&mut self, at: i64, ev: Event) {
        self.seq += 1;
        self.events.insert(self.seq, ev);
        self.queue.push(Reverse((at, self.seq)));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn now(&self) -> Timestamp {
        Timestamp::from_micros(self.now)
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    /// One line per event, in processing order.
    pub fn log(&self) -> &str {
        &self.log
    }

    pub fn node(&self, i: usize) -> &GossipState {
        &self.nodes[i]
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.alive[i]
    }

    fn reachable(&self, a: usize, b: usize) -> bool {
        self.side.as_ref().is_none_or(|s| s[a] == s[b])
    }

    fn send(&mut self, from: usize, out: Vec<Outgoing>) {
        for o in out {
            self.stats.sent += 1;
            if o.msg.ttl == 0 {
                self.stats.ttl_violations += 1;
            }
            let _ = writeln!(
                self.log,
                "{} send {}->{} {} ts={} ttl={}",
                self.now, from, o.to, o.msg.message_type, o.msg.timestamp, o.msg.ttl
            );
            let Some(&to) = self.by_addr.get(&o.to) else {
                self.stats.dropped += 1;
                continue;
            };
            if self.cfg.drop_rate > 0.0 && self.rng.gen_bool(self.cfg.drop_rate) {
                self.stats.dropped += 1;
                let _ = writeln!(self.log, "{} lost {}->{}", self.now, from, to);
                continue;
            }
            let copies = if self.cfg.duplicate_rate > 0.0 && self.rng.gen_bool(self.cfg.duplicate_rate) {
                self.stats.duplicates_injected += 1;
                2
            } else {
                1
            };
            for _ in 0..copies {
                let (lo, hi) = self.cfg.latency_ms;
                let delay = self.rng.gen_range(lo * 1000..=hi * 1000) as i64;
                self.push(self.now + delay, Event::Deliver { to, from, msg: o.msg.clone() });
            }
        }
    }

    /// Publishes `agent_id` at `node` now.
    pub fn register(&mut self, node: usize, agent_id: &str, capabilities: Vec<String>) -> Result<(), HarnessError> {
        let now = self.now();
        let out = self.nodes[node]
            .register_agent(agent_id, capabilities, now)
            .map_err(|e| HarnessError::Spec(e.to_string()))?;
        let _ = writeln!(self.log, "{} register {} {}", self.now, node, agent_id);
        self.send(node, out);
        Ok(())
    }

    pub fn kill(&mut self, node: usize) {
        self.alive[node] = false;
        let _ = writeln!(self.log, "{} kill {}", self.now, node);
    }

    pub fn revive(&mut self, node: usize) {
        self.alive[node] = true;
        let _ = writeln!(self.log, "{} revive {}", self.now, node);
    }

    /// Nodes in `group` can only reach each other; the rest likewise.
    pub fn partition(&mut self, group: &[usize]) {
        let mut side = vec![false; self.nodes.len()];
        for &i in group {
            side[i] = true;
        }
        self.side = Some(side);
        let _ = writeln!(self.log, "{} partition {:?}", self.now, group);
    }

    pub fn heal(&mut self) {
        self.side = None;
        let _ = writeln!(self.log, "{} heal", self.now);
    }

    /// Processes every event up to and including `until` (µs).
    pub fn run_until(&mut self, until: Timestamp) {
        let until = until.as_micros();
        while let Some(&Reverse((at, seq))) = self.queue.peek() {
            if at > until {
                break;
            }
            self.queue.pop();
            self.now = at;
            let ev = self.events.remove(&seq).expect("queued event exists");
            match ev {
                Event::Tick { node } => {
                    let next = self.now + self.period_us();
                    self.push(next, Event::Tick { node });
                    if !self.alive[node] {
                        continue;
                    }
                    let now = self.now();
                    let report = self.nodes[node].tick(now);
                    for t in &report.transitions {
                        let _ = writeln!(self.log, "{} peer {} {} {:?}->{:?}", self.now, node, t.peer, t.from, t.to);
                    }
                    self.send(node, report.sends);
                }
                Event::Deliver { to, from, msg } => {
                    if !self.alive[to] || !self.alive[from] || !self.reachable(from, to) {
                        self.stats.dropped += 1;
                        continue;
                    }
                    self.stats.delivered += 1;
                    let key = MessageKey::of(&msg);
                    let from_addr = self.addrs[from].clone();
                    let now = self.now();
                    let receipt = self.nodes[to].on_receive(msg, &from_addr, now);
                    let verdict = match &receipt {
                        Receipt::Duplicate => {
                            self.stats.duplicate_receipts += 1;
                            "dup"
                        }
                        Receipt::Applied(_) | Receipt::Unrecognized(_) => {
                            if !self.applied[to].insert(key) {
                                self.stats.double_applies += 1;
                            }
                            "apply"
                        }
                    };
                    let _ = writeln!(self.log, "{} recv {}<-{} {}", self.now, to, from, verdict);
                    let sends = receipt.sends().to_vec();
                    self.send(to, sends);
                }
            }
        }
        self.now = self.now.max(until);
    }

    /// Share of live nodes whose directory shows `agent_id`.
    pub fn coverage(&self, agent_id: &str) -> f64 {
        let now = self.now();
        let live: Vec<&GossipState> = self.nodes.iter().zip(&self.alive).filter(|(_, a)| **a).map(|(n, _)| n).collect();
        if live.is_empty() {
            return 0.0;
        }
        live.iter().filter(|n| n.find_agent(agent_id, now).is_some()).count() as f64 / live.len() as f64
    }
}

/// Coverage after each gossip round, averaged over the injected records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub nodes: usize,
    pub registrations: usize,
    pub seed: u64,
    /// Index r is the state at the end of round r (round 0 = right after
    /// the registrations).
    pub coverage: Vec<f64>,
    /// Worst record per round.
    pub min_coverage: Vec<f64>,
    pub stats: SimStats,
    /// SHA-256 of the event log.
    pub log_digest: String,
}

impl ConvergenceReport {
    /// First round at which coverage of every record reached `threshold`.
    pub fn rounds_to(&self, threshold: f64) -> Option<usize> {
        self.min_coverage.iter().position(|c| *c >= threshold)
    }
}

/// Injects `registrations` records at t=0 on random nodes, applies the
/// spec's fault schedule, and samples coverage at each round boundary.
pub fn run_convergence(
    spec: &ScenarioSpec,
    registrations: usize,
    rounds: usize,
) -> Result<ConvergenceReport, HarnessError> {
    run_convergence_with(
        spec,
        registrations,
        rounds,
        GossipSimConfig { period: Duration::from_millis(spec.report_period_ms), ..GossipSimConfig::default() },
    )
    .map(|(r, _)| r)
}

pub fn run_convergence_with(
    spec: &ScenarioSpec,
    registrations: usize,
    rounds: usize,
    cfg: GossipSimConfig,
) -> Result<(ConvergenceReport, GossipSim), HarnessError> {
    let period = cfg.period;
    let mut sim = GossipSim::new(spec, cfg)?;
    let mut pick = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let faults = spec.schedule();
    let mut next_fault = 0;
    let mut apply_faults = |sim: &mut GossipSim, upto: u64| -> Result<(), HarnessError> {
        while next_fault < faults.len() && faults[next_fault].at_ms <= upto {
            let f = &faults[next_fault];
            sim.run_until(Timestamp::from_millis(f.at_ms as i64));
            match (f.action, f.target()?) {
                (FaultAction::Kill, FaultTarget::Node(i)) => sim.kill(i),
                (FaultAction::Partition, FaultTarget::Range(r)) => sim.partition(&r.collect::<Vec<_>>()),
                (FaultAction::Heal, FaultTarget::Node(i)) => sim.revive(i),
                (FaultAction::Heal, _) => {
                    sim.heal();
                    for i in 0..sim.len() {
                        if !sim.is_alive(i) {
                            sim.revive(i);
                        }
                    }
                }
                _ => return Err(HarnessError::Spec(format!("unsupported fault {f:?}"))),
            }
            next_fault += 1;
        }
        Ok(())
    };
    apply_faults(&mut sim, 0)?;

    let ids: Vec<String> = (0..registrations).map(|r| format!("sim/agent_{r}")).collect();
    for id in &ids {
        let node = pick.gen_range(0..sim.len());
        sim.register(node, id, vec!["simulated".into()])?;
    }
    let sample = |sim: &GossipSim| -> (f64, f64) {
        if ids.is_empty() {
            return (1.0, 1.0);
        }
        let c: Vec<f64> = ids.iter().map(|id| sim.coverage(id)).collect();
        (c.iter().sum::<f64>() / c.len() as f64, c.iter().copied().fold(f64::INFINITY, f64::min))
    };
    let (mut coverage, mut min_coverage) = (Vec::new(), Vec::new());
    let (avg, min) = sample(&sim);
    coverage.push(avg);
    min_coverage.push(min);
    for r in 1..=rounds {
        let boundary = period.as_millis() as u64 * r as u64;
        apply_faults(&mut sim, boundary)?;
        sim.run_until(Timestamp::from_millis(boundary as i64));
        let (avg, min) = sample(&sim);
        coverage.push(avg);
        min_coverage.push(min);
    }
    let report = ConvergenceReport {
        nodes: sim.len(),
        registrations,
        seed: spec.seed,
        coverage,
        min_coverage,
        stats: sim.stats(),
        log_digest: super::digest(sim.log().as_bytes()),
    };
    Ok((report, sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Topology;

    fn spec(n: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec::new(n, 0, Topology::FullBootstrap, seed)
    }

    #[test]
    fn single_node_is_covered_immediately() {
        let r = run_convergence(&spec(1, 1), 1, 3).unwrap();
        assert_eq!(r.coverage[0], 1.0);
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = || GossipSimConfig { duplicate_rate: 0.1, drop_rate: 0.05, ..GossipSimConfig::default() };
        let (a, sa) = run_convergence_with(&spec(12, 9), 2, 5, cfg()).unwrap();
        let (b, sb) = run_convergence_with(&spec(12, 9), 2, 5, cfg()).unwrap();
        assert_eq!(sa.log(), sb.log());
        assert_eq!(a, b);
        let (c, _) = run_convergence_with(&spec(12, 10), 2, 5, cfg()).unwrap();
        assert_ne!(a.log_digest, c.log_digest);
    }

    #[test]
    fn injected_duplicates_never_double_apply() {
        let cfg = GossipSimConfig { duplicate_rate: 0.5, ..GossipSimConfig::default() };
        let (r, _) = run_convergence_with(&spec(20, 3), 3, 8, cfg).unwrap();
        assert!(r.stats.duplicates_injected > 0);
        assert!(r.stats.duplicate_receipts > 0);
        assert_eq!(r.stats.double_applies, 0);
        assert_eq!(r.stats.ttl_violations, 0);
    }

    #[test]
    fn line_topology_still_converges() {
        let s = ScenarioSpec::new(20, 0, Topology::LineBootstrap, 4);
        let r = run_convergence(&s, 1, 15).unwrap();
        assert_eq!(*r.min_coverage.last().unwrap(), 1.0, "{:?}", r.coverage);
    }

    #[test]
    fn partition_plateaus_then_heals() {
        let s = spec(20, 5).with_fault(0, FaultAction::Partition, "node-0..node-9").with_fault(
            15_000,
            FaultAction::Heal,
            "*",
        );
        let mut sim = GossipSim::new(&s, GossipSimConfig::default()).unwrap();
        sim.partition(&(0..10).collect::<Vec<_>>());
        sim.register(0, "sim/x", vec![]).unwrap();
        sim.run_until(Timestamp::from_millis(15_000));
        assert_eq!(sim.coverage("sim/x"), 0.5);
        sim.heal();
        sim.run_until(Timestamp::from_millis(30_000));
        assert_eq!(sim.coverage("sim/x"), 1.0);
    }

    #[test]
    fn killed_node_is_declared_dead() {
        let mut sim = GossipSim::new(&spec(5, 2), GossipSimConfig::default()).unwrap();
        sim.run_until(Timestamp::from_millis(2_000));
        sim.kill(4);
        sim.run_until(Timestamp::from_millis(15_000));
        let addr = sim_addr(4);
        for i in 0..4 {
            assert_eq!(sim.node(i).peer(&addr).unwrap().state, crate::gossip::PeerState::Dead);
        }
    }
}
