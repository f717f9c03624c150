use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::id::{NodeId, ID_BITS};
use super::DhtError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Contact {
    pub node_id: NodeId,
    pub ip: String,
    pub port: u16,
}

impl Contact {
    pub fn new(node_id: NodeId, ip: impl Into<String>, port: u16) -> Self {
        Contact { node_id, ip: ip.into(), port }
    }

    pub fn addr(&self) -> String {
        format!("{}:{}", self.ip, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Already known; moved to the most-recently-seen end.
    Refreshed,
    /// Bucket was full and its least-recently-seen contact failed the probe.
    Replaced {
        evicted: Contact,
    },
    /// Bucket was full and its least-recently-seen contact answered.
    Dropped,
}

/// Result of an insert that defers the liveness probe to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TryInsert {
    Done(InsertOutcome),
    Full { least_recent: Contact },
}

/// k-buckets indexed by `floor(log2(owner XOR id))`. Each bucket is ordered
/// least-recently-seen first.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    owner: NodeId,
    k: usize,
    buckets: Vec<VecDeque<Contact>>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, k: usize) -> Self {
        assert!(k > 0, "bucket capacity must be positive");
        RoutingTable { owner, k, buckets: vec![VecDeque::new(); ID_BITS] }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bucket(&self, index: usize) -> &VecDeque<Contact> {
        &self.buckets[index]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.buckets.iter().flatten()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.owner.bucket_index(id).is_some_and(|i| self.buckets[i].iter().any(|c| &c.node_id == id))
    }

    fn index_of(&self, c: &Contact) -> Result<usize, DhtError> {
        self.owner.bucket_index(&c.node_id).ok_or(DhtError::SelfContact)
    }

    /// Inserts without probing. A known contact is refreshed; a full bucket
    /// reports its least-recently-seen member for the caller to probe.
    pub fn try_insert(&mut self, c: Contact) -> Result<TryInsert, DhtError> {
        let index = self.index_of(&c)?;
        let k = self.k;
        let bucket = &mut self.buckets[index];
        if let Some(pos) = bucket.iter().position(|e| e.node_id == c.node_id) {
            bucket.remove(pos);
            bucket.push_back(c);
            return Ok(TryInsert::Done(InsertOutcome::Refreshed));
        }
        if bucket.len() < k {
            bucket.push_back(c);
            return Ok(TryInsert::Done(InsertOutcome::Inserted));
        }
        Ok(TryInsert::Full { least_recent: bucket.front().cloned().expect("full bucket") })
    }

    /// Applies the outcome of probing `least_recent` on behalf of `candidate`.
    pub fn resolve_probe(&mut self, least_recent: &Contact, alive: bool, candidate: Contact) -> InsertOutcome {
        let Ok(index) = self.index_of(&candidate) else {
            return InsertOutcome::Dropped;
        };
        let k = self.k;
        let bucket = &mut self.buckets[index];
        if bucket.iter().any(|e| e.node_id == candidate.node_id) {
            return InsertOutcome::Refreshed;
        }
        let pos = bucket.iter().position(|e| e.node_id == least_recent.node_id);
        match (alive, pos) {
            (true, Some(pos)) => {
                let c = bucket.remove(pos).expect("position in range");
                bucket.push_back(c);
                InsertOutcome::Dropped
            }
            (false, Some(pos)) => {
                let evicted = bucket.remove(pos).expect("position in range");
                bucket.push_back(candidate);
                InsertOutcome::Replaced { evicted }
            }
            // The probed contact vanished meanwhile; there may be room now.
            (_, None) if bucket.len() < k => {
                bucket.push_back(candidate);
                InsertOutcome::Inserted
            }
            (_, None) => InsertOutcome::Dropped,
        }
    }

    /// Insert with a synchronous liveness probe for full buckets.
    pub fn insert_with(
        &mut self,
        c: Contact,
        mut is_alive: impl FnMut(&Contact) -> bool,
    ) -> Result<InsertOutcome, DhtError> {
        match self.try_insert(c.clone())? {
            TryInsert::Done(outcome) => Ok(outcome),
            TryInsert::Full { least_recent } => {
                let alive = is_alive(&least_recent);
                Ok(self.resolve_probe(&least_recent, alive, c))
            }
        }
    }

    pub fn remove(&mut self, id: &NodeId) -> Option<Contact> {
        let index = self.owner.bucket_index(id)?;
        let bucket = &mut self.buckets[index];
        let pos = bucket.iter().position(|c| &c.node_id == id)?;
        bucket.remove(pos)
    }

    /// Up to `count` known contacts nearest to `target`, ascending by XOR
    /// distance; equal distances (impossible for distinct ids) fall back to id.
    pub fn find_closest(&self, target: &NodeId, count: usize) -> Vec<Contact> {
        let mut all: Vec<&Contact> = self.contacts().collect();
        all.sort_by(|a, b| {
            target.distance(&a.node_id).cmp(&target.distance(&b.node_id)).then_with(|| a.node_id.cmp(&b.node_id))
        });
        all.into_iter().take(count).cloned().collect()
    }
}
