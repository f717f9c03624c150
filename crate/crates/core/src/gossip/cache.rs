use std::collections::{HashMap, VecDeque};

use crate::time::Timestamp;
use crate::wire::GossipMessage;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageKey {
    pub sender_id: String,
    pub message_type: String,
    pub timestamp: Timestamp,
}

impl MessageKey {
    pub fn of(msg: &GossipMessage) -> Self {
        MessageKey {
            sender_id: msg.sender_id.clone(),
            message_type: msg.message_type.clone(),
            timestamp: msg.timestamp,
        }
    }
}

/// Seen-message set with FIFO eviction.
#[derive(Debug, Clone)]
pub struct MessageCache {
    capacity: usize,
    seen: HashMap<MessageKey, Timestamp>,
    order: VecDeque<MessageKey>,
}

impl MessageCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        MessageCache { capacity, seen: HashMap::new(), order: VecDeque::new() }
    }

    pub fn contains(&self, key: &MessageKey) -> bool {
        self.seen.contains_key(key)
    }

    pub fn first_seen(&self, key: &MessageKey) -> Option<Timestamp> {
        self.seen.get(key).copied()
    }

    /// Returns false if the key was already present.
    pub fn insert(&mut self, key: MessageKey, now: Timestamp) -> bool {
        if self.seen.contains_key(&key) {
            return false;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.seen.insert(key.clone(), now);
        self.order.push_back(key);
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(n: i64) -> MessageKey {
        MessageKey { sender_id: "n".into(), message_type: "heartbeat".into(), timestamp: Timestamp::from_millis(n) }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut c = MessageCache::new(2);
        assert!(c.insert(key(1), Timestamp::from_millis(1)));
        assert!(c.insert(key(2), Timestamp::from_millis(2)));
        assert!(!c.insert(key(2), Timestamp::from_millis(3)));
        assert!(c.insert(key(3), Timestamp::from_millis(4)));
        assert!(!c.contains(&key(1)));
        assert!(c.contains(&key(2)) && c.contains(&key(3)));
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(cap in 1usize..16, keys in proptest::collection::vec(0i64..40, 0..200)) {
            let mut c = MessageCache::new(cap);
            for k in keys {
                c.insert(key(k), Timestamp::from_millis(0));
                prop_assert!(c.len() <= cap);
                prop_assert!(c.contains(&key(k)));
            }
        }
    }
}
