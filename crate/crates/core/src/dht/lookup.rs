//! Iterative Kademlia lookup as a pure state machine.
//!
//! The driver asks for a batch of contacts to query (one *round*), reports
//! each reply or failure, then asks for the next batch. Rounds query the α
//! closest unqueried candidates; once a round fails to bring a closer node,
//! the next round queries every unqueried candidate among the k closest. The
//! lookup ends when the k closest live candidates have all answered.

use std::collections::BTreeMap;

use super::id::{Distance, NodeId};
use super::routing::Contact;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Fresh,
    InFlight,
    Answered,
    Failed,
}

#[derive(Debug, Clone)]
struct Candidate {
    contact: Contact,
    state: State,
}

#[derive(Debug, Clone)]
pub struct Lookup {
    target: NodeId,
    k: usize,
    alpha: usize,
    candidates: BTreeMap<Distance, Candidate>,
    rounds: usize,
    sweep: bool,
    closest_before_round: Option<Distance>,
    in_flight: usize,
}

impl Lookup {
    /// `local` is the querying node itself: counted as already answered so it
    /// competes for the closest set without being contacted.
    pub fn new(target: NodeId, local: Option<Contact>, seeds: Vec<Contact>, k: usize, alpha: usize) -> Self {
        let mut lookup = Lookup {
            target,
            k,
            alpha,
            candidates: BTreeMap::new(),
            rounds: 0,
            sweep: false,
            closest_before_round: None,
            in_flight: 0,
        };
        if let Some(me) = local {
            let d = target.distance(&me.node_id);
            lookup.candidates.insert(d, Candidate { contact: me, state: State::Answered });
        }
        lookup.add(seeds);
        lookup
    }

    pub fn target(&self) -> NodeId {
        self.target
    }

    /// Rounds issued so far.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    fn add(&mut self, contacts: Vec<Contact>) {
        for c in contacts {
            let d = self.target.distance(&c.node_id);
            self.candidates.entry(d).or_insert(Candidate { contact: c, state: State::Fresh });
        }
    }

    /// The k closest candidates that have not failed, nearest first.
    fn shortlist(&self) -> impl Iterator<Item = (&Distance, &Candidate)> {
        self.candidates.iter().filter(|(_, c)| c.state != State::Failed).take(self.k)
    }

    fn closest_known(&self) -> Option<Distance> {
        self.candidates.iter().find(|(_, c)| c.state != State::Failed).map(|(d, _)| *d)
    }

    /// Next batch to query, or `None` once the lookup has converged.
    pub fn next_round(&mut self) -> Option<Vec<Contact>> {
        assert_eq!(self.in_flight, 0, "previous round still in flight");
        let limit = if self.sweep { self.k } else { self.alpha };
        let batch: Vec<Distance> =
            self.shortlist().filter(|(_, c)| c.state == State::Fresh).take(limit).map(|(d, _)| *d).collect();
        if batch.is_empty() {
            return None;
        }
        self.closest_before_round = self.closest_known();
        self.rounds += 1;
        self.in_flight = batch.len();
        Some(
            batch
                .into_iter()
                .map(|d| {
                    let c = self.candidates.get_mut(&d).expect("candidate");
                    c.state = State::InFlight;
                    c.contact.clone()
                })
                .collect(),
        )
    }

    fn settle(&mut self, from: &NodeId, state: State) -> bool {
        let d = self.target.distance(from);
        match self.candidates.get_mut(&d) {
            Some(c) if c.state == State::InFlight => {
                c.state = state;
                self.in_flight -= 1;
                true
            }
            _ => false,
        }
    }

    /// Records a reply carrying closer contacts.
    pub fn on_reply(&mut self, from: &NodeId, contacts: Vec<Contact>) {
        if self.settle(from, State::Answered) {
            self.add(contacts);
        }
    }

    pub fn on_failure(&mut self, from: &NodeId) {
        self.settle(from, State::Failed);
    }

    /// Call after every reply of a round is in; decides sweep mode.
    pub fn end_round(&mut self) {
        let improved = match (self.closest_known(), self.closest_before_round) {
            (Some(now), Some(before)) => now < before,
            (Some(_), None) => true,
            _ => false,
        };
        self.sweep = !improved;
    }

    /// Answered candidates, nearest first, at most k.
    pub fn closest(&self) -> Vec<Contact> {
        self.candidates
            .values()
            .filter(|c| c.state == State::Answered)
            .take(self.k)
            .map(|c| c.contact.clone())
            .collect()
    }

    /// Every non-failed candidate, nearest first, at most k.
    pub fn known(&self) -> Vec<Contact> {
        self.shortlist().map(|(_, c)| c.contact.clone()).collect()
    }

    /// True when at least one remote contact answered.
    pub fn any_remote_answered(&self, local: Option<&NodeId>) -> bool {
        self.candidates.values().any(|c| c.state == State::Answered && Some(&c.contact.node_id) != local)
    }

    pub fn any_remote_queried(&self, local: Option<&NodeId>) -> bool {
        self.candidates.values().any(|c| c.state != State::Fresh && Some(&c.contact.node_id) != local)
    }
}
