use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::{Digest, Sha1};

pub const ID_BYTES: usize = 20;
pub const ID_BITS: usize = ID_BYTES * 8;

/// 160-bit identifier, big-endian. Derived ordering is numeric ordering.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId([u8; ID_BYTES]);

/// XOR distance between two ids, itself a 160-bit unsigned integer.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Distance([u8; ID_BYTES]);

impl NodeId {
    pub const fn from_bytes(bytes: [u8; ID_BYTES]) -> Self {
        NodeId(bytes)
    }

    /// Places `v` in the low-order 64 bits.
    pub fn from_u64(v: u64) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        bytes[ID_BYTES - 8..].copy_from_slice(&v.to_be_bytes());
        NodeId(bytes)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        rng.fill(&mut bytes[..]);
        NodeId(bytes)
    }

    /// SHA-1 of the key string; identical on every node.
    pub fn for_key(key: &str) -> Self {
        let digest = Sha1::digest(key.as_bytes());
        let mut bytes = [0u8; ID_BYTES];
        bytes.copy_from_slice(&digest);
        NodeId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn distance(&self, other: &NodeId) -> Distance {
        let mut out = [0u8; ID_BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Distance(out)
    }

    /// `floor(log2(self XOR other))`, or `None` for identical ids.
    pub fn bucket_index(&self, other: &NodeId) -> Option<usize> {
        self.distance(other).log2()
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != ID_BYTES * 2 || !s.is_ascii() {
            return None;
        }
        let mut bytes = [0u8; ID_BYTES];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).ok()?;
            bytes[i] = u8::from_str_radix(pair, 16).ok()?;
        }
        Some(NodeId(bytes))
    }
}

impl Distance {
    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    pub fn leading_zeros(&self) -> u32 {
        let mut n = 0;
        for b in self.0 {
            if b == 0 {
                n += 8;
            } else {
                return n + b.leading_zeros();
            }
        }
        n
    }

    pub fn log2(&self) -> Option<usize> {
        if self.is_zero() {
            None
        } else {
            Some(ID_BITS - 1 - self.leading_zeros() as usize)
        }
    }

    pub fn xor(&self, other: &Distance) -> Distance {
        let mut out = [0u8; ID_BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Distance(out)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &self.to_hex()[..8])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Distance(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for NodeId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::from_hex(s).ok_or_else(|| format!("invalid node id {s:?}: expected 40 hex digits"))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_id() -> impl Strategy<Value = NodeId> {
        any::<[u8; ID_BYTES]>().prop_map(NodeId::from_bytes)
    }

    #[test]
    fn toy_four_bit_distance() {
        let a = NodeId::from_u64(0b0001);
        let b = NodeId::from_u64(0b1001);
        assert_eq!(a.distance(&b), NodeId::from_u64(0b1000).distance(&NodeId::default()));
        assert_eq!(a.bucket_index(&b), Some(3));
    }

    #[test]
    fn lowest_and_highest_buckets() {
        let a = NodeId::from_u64(0b1010);
        assert_eq!(a.bucket_index(&NodeId::from_u64(0b1011)), Some(0));
        let mut top = *a.as_bytes();
        top[0] ^= 0x80;
        assert_eq!(a.bucket_index(&NodeId::from_bytes(top)), Some(159));
        assert_eq!(a.bucket_index(&a), None);
    }

    #[test]
    fn key_hash_is_stable() {
        // Reference digest: sha1("agent:example/academic_agent")
        let id = NodeId::for_key("agent:example/academic_agent");
        assert_eq!(id, NodeId::for_key("agent:example/academic_agent"));
        assert_eq!(NodeId::for_key("").to_hex(), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    }

    #[test]
    fn hex_round_trip() {
        let id = NodeId::for_key("x");
        assert_eq!(id.to_hex().parse::<NodeId>().unwrap(), id);
        assert!("zz".parse::<NodeId>().is_err());
    }

    proptest! {
        #[test]
        fn xor_metric_laws(a in arb_id(), b in arb_id(), c in arb_id()) {
            prop_assert!(a.distance(&a).is_zero());
            prop_assert_eq!(a.distance(&b), b.distance(&a));
            prop_assert_eq!(a.distance(&b).xor(&b.distance(&c)), a.distance(&c));
            prop_assert_eq!(a.distance(&b).is_zero(), a == b);
        }

        #[test]
        fn bucket_index_is_floor_log2(a in arb_id(), b in arb_id()) {
            prop_assume!(a != b);
            let i = a.bucket_index(&b).unwrap();
            // Oracle: position of the highest set bit, scanning bit by bit.
            let d = a.distance(&b);
            let mut highest = None;
            for bit in 0..ID_BITS {
                let byte = d.as_bytes()[ID_BYTES - 1 - bit / 8];
                if byte >> (bit % 8) & 1 == 1 {
                    highest = Some(bit);
                }
            }
            prop_assert_eq!(Some(i), highest);
        }
    }
}
