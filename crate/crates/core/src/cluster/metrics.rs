//! Peer metrics with TTLs, as gossiped to every cluster member.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PeerId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    Freespace,
    RepoSize,
    NumPin,
    PinQueue,
    Tag(String),
}

impl MetricKind {
    /// Key used in TTL tables; all tags share one entry.
    pub fn ttl_key(&self) -> &str {
        match self {
            MetricKind::Freespace => "freespace",
            MetricKind::RepoSize => "reposize",
            MetricKind::NumPin => "numpin",
            MetricKind::PinQueue => "pinqueue",
            MetricKind::Tag(_) => "tag",
        }
    }

    pub fn partitionable(&self) -> bool {
        matches!(self, MetricKind::Tag(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricValue {
    Int(u64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerMetric {
    pub kind: MetricKind,
    pub value: MetricValue,
    pub expiry: u64,
    pub weight: i64,
    pub partitionable: bool,
}

impl PeerMetric {
    /// Usable at tick `t` only while `expiry > t`.
    pub fn valid_at(&self, t: u64) -> bool {
        self.expiry > t
    }

    pub fn int(&self) -> Option<u64> {
        match self.value {
            MetricValue::Int(v) => Some(v),
            MetricValue::Text(_) => None,
        }
    }
}

pub const DEFAULT_TTL: u64 = 30;

/// TTL in ticks per metric type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricTtls(pub BTreeMap<String, u64>);

impl Default for MetricTtls {
    fn default() -> Self {
        Self(["freespace", "reposize", "numpin", "pinqueue", "tag"].iter().map(|k| (k.to_string(), DEFAULT_TTL)).collect())
    }
}

impl MetricTtls {
    pub fn ttl(&self, kind: &MetricKind) -> u64 {
        self.0.get(kind.ttl_key()).copied().unwrap_or(DEFAULT_TTL).max(1)
    }

    /// Half the smallest TTL among `kinds`, at least one tick.
    pub fn publish_interval<'a>(&self, kinds: impl IntoIterator<Item = &'a MetricKind>) -> u64 {
        let min = kinds.into_iter().map(|k| self.ttl(k)).min().unwrap_or(DEFAULT_TTL);
        (min / 2).max(1)
    }
}

/// Latest metric of each type per peer, as seen by every member.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricBoard {
    latest: BTreeMap<PeerId, BTreeMap<MetricKind, PeerMetric>>,
}

impl MetricBoard {
    pub fn publish(&mut self, peer: PeerId, metric: PeerMetric) {
        self.latest.entry(peer).or_default().insert(metric.kind.clone(), metric);
    }

    pub fn valid(&self, peer: &PeerId, kind: &MetricKind, t: u64) -> Option<&PeerMetric> {
        self.latest.get(peer)?.get(kind).filter(|m| m.valid_at(t))
    }

    pub fn valid_metrics(&self, peer: &PeerId, t: u64) -> impl Iterator<Item = &PeerMetric> {
        self.latest.get(peer).into_iter().flat_map(|m| m.values()).filter(move |m| m.valid_at(t))
    }

    /// Peers that have published something and whose metrics all expired.
    pub fn all_expired(&self, peer: &PeerId, t: u64) -> bool {
        match self.latest.get(peer) {
            Some(m) if !m.is_empty() => m.values().all(|m| !m.valid_at(t)),
            _ => false,
        }
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerId> {
        self.latest.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn publish_interval_is_half_the_smallest_ttl() {
        let ttls = MetricTtls::default();
        assert_eq!(ttls.publish_interval([&MetricKind::Freespace]), 15);
        let mut custom = MetricTtls::default();
        custom.0.insert("numpin".into(), 10);
        assert_eq!(custom.publish_interval([&MetricKind::Freespace, &MetricKind::NumPin]), 5);
    }

    #[test]
    fn expiry_is_exclusive() {
        let m = PeerMetric { kind: MetricKind::Freespace, value: MetricValue::Int(1), expiry: 30, weight: 0, partitionable: false };
        assert!(m.valid_at(29));
        assert!(!m.valid_at(30));
    }
}
