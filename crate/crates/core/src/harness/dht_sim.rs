//! Store/lookup trials on an in-memory Kademlia network, checked against a
//! brute-force XOR sort of every node id.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::HarnessError;
use crate::dht::{Contact, Dht, DhtConfig, LookupResult, MemoryDhtNetwork, NodeId};
use crate::time::{Clock, ManualClock, Timestamp};
use crate::wire::Params;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DhtSimReport {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// `ceil(log2 n) + 3`.
    pub round_bound: usize,
    pub stored: usize,
    pub found: usize,
    pub within_bound: usize,
    pub closest_exact: usize,
    pub max_rounds: usize,
    pub mean_rounds: f64,
}

impl DhtSimReport {
    /// Share of trials whose value lookup succeeded within the round bound.
    pub fn success_rate(&self) -> f64 {
        self.within_bound as f64 / self.trials.max(1) as f64
    }
}

pub fn round_bound(n: usize) -> usize {
    (n.max(1) as f64).log2().ceil() as usize + 3
}

pub struct DhtSimNetwork {
    pub net: Arc<MemoryDhtNetwork>,
    pub nodes: Vec<Arc<Dht>>,
    pub config: DhtConfig,
}

impl DhtSimNetwork {
    /// `n` nodes with seeded ids; node i bootstraps from node 0, then every
    /// node refreshes once.
    pub async fn build(n: usize, seed: u64, config: DhtConfig) -> Result<Self, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = MemoryDhtNetwork::new();
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(Timestamp::from_millis(0)));
        let nodes: Vec<Arc<Dht>> = (0..n)
            .map(|i| {
                let c = Contact::new(NodeId::random(&mut rng), format!("10.1.{}.{}", i / 250, i % 250 + 1), 4000);
                net.spawn_with(c, config, Arc::clone(&clock))
            })
            .collect();
        let boot = |e| HarnessError::Dht(format!("bootstrap: {e}"));
        for node in nodes.iter().skip(1) {
            node.bootstrap(&[nodes[0].contact().clone()]).await.map_err(boot)?;
        }
        if n > 1 {
            for node in &nodes {
                node.find_node(node.id()).await.map_err(boot)?;
            }
        }
        Ok(DhtSimNetwork { net, nodes, config })
    }

    /// The k ids nearest `target` over the whole network.
    pub fn oracle_closest(&self, target: &NodeId) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|d| d.id()).collect();
        ids.sort_by_key(|id| id.distance(target));
        ids.truncate(self.config.k);
        ids
    }
}

/// Per trial: a random node stores a fresh key, another random node looks
/// it up, and a third resolves the k closest to a random id.
pub async fn run_dht_trials(n: usize, trials: usize, seed: u64) -> Result<DhtSimReport, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Spec("need at least one node".into()));
    }
    let sim = DhtSimNetwork::build(n, seed, DhtConfig::default()).await?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let bound = round_bound(n);
    let mut report = DhtSimReport {
        n,
        trials,
        seed,
        round_bound: bound,
        stored: 0,
        found: 0,
        within_bound: 0,
        closest_exact: 0,
        max_rounds: 0,
        mean_rounds: 0.0,
    };
    let mut total_rounds = 0usize;
    for t in 0..trials {
        let key = format!("trial:{seed}:{t}");
        let mut value = Params::new();
        value.insert("trial".into(), json!(t));
        let writer = &sim.nodes[rng.gen_range(0..n)];
        if writer.store(&key, value.clone()).await.is_ok() {
            report.stored += 1;
        }
        let reader = &sim.nodes[rng.gen_range(0..n)];
        if let Ok(LookupResult::Found { record, rounds }) = reader.iterative_lookup(&key).await {
            if record.value == value {
                report.found += 1;
                report.within_bound += usize::from(rounds <= bound);
                report.max_rounds = report.max_rounds.max(rounds);
                total_rounds += rounds;
            }
        }
        let target = NodeId::random(&mut rng);
        let asker = &sim.nodes[rng.gen_range(0..n)];
        if let Ok(found) = asker.find_node(target).await {
            let ids: Vec<NodeId> = found.closest.iter().map(|c| c.node_id).collect();
            report.closest_exact += usize::from(ids == sim.oracle_closest(&target));
        }
    }
    report.mean_rounds = total_rounds as f64 / report.found.max(1) as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_matches_formula() {
        assert_eq!(round_bound(8), 6);
        assert_eq!(round_bound(16), 7);
        assert_eq!(round_bound(33), 9);
        assert_eq!(round_bound(1), 3);
    }

    #[tokio::test]
    async fn small_network_is_exact() {
        let r = run_dht_trials(16, 50, 11).await.unwrap();
        assert_eq!(r.found, 50);
        assert_eq!(r.within_bound, 50);
        assert_eq!(r.closest_exact, 50);
    }

    #[tokio::test]
    async fn single_node_answers_itself() {
        let r = run_dht_trials(1, 5, 0).await.unwrap();
        assert_eq!(r.found, 5);
        assert_eq!(r.max_rounds, 0);
        assert_eq!(r.closest_exact, 5);
    }
}
