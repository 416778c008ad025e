use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::PeerId;

pub const DEFAULT_HEALTH_INTERVAL: u64 = 30;

/// Central registry mapping cluster peers to community addresses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscoveryRegistry {
    addresses: BTreeMap<PeerId, String>,
    healthy: Option<BTreeSet<PeerId>>,
    pub health_interval: u64,
    last_check: Option<u64>,
}

impl Default for DiscoveryRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_HEALTH_INTERVAL)
    }
}

impl DiscoveryRegistry {
    pub fn new(health_interval: u64) -> Self {
        Self { addresses: BTreeMap::new(), healthy: None, health_interval: health_interval.max(1), last_check: None }
    }

    pub fn register(&mut self, peer: PeerId, address: impl Into<String>) {
        self.addresses.insert(peer, address.into());
    }

    pub fn unregister(&mut self, peer: &PeerId) {
        self.addresses.remove(peer);
        if let Some(h) = self.healthy.as_mut() {
            h.remove(peer);
        }
    }

    pub fn address(&self, peer: &PeerId) -> Option<&str> {
        self.addresses.get(peer).map(String::as_str)
    }

    /// Peers that passed the latest check; every registered peer before any.
    pub fn list_peers(&self) -> Vec<(PeerId, String)> {
        self.addresses.iter().filter(|(p, _)| self.healthy.as_ref().is_none_or(|h| h.contains(p))).map(|(p, a)| (*p, a.clone())).collect()
    }

    pub fn due(&self, now: u64) -> bool {
        self.last_check.is_none_or(|t| now >= t + self.health_interval)
    }

    /// Probe every registered peer; returns whether a check ran.
    pub fn health_tick(&mut self, now: u64, mut is_up: impl FnMut(&PeerId) -> bool) -> bool {
        if !self.due(now) {
            return false;
        }
        self.check_now(now, &mut is_up);
        true
    }

    pub fn check_now(&mut self, now: u64, is_up: &mut dyn FnMut(&PeerId) -> bool) {
        self.healthy = Some(self.addresses.keys().filter(|p| is_up(p)).copied().collect());
        self.last_check = Some(now);
    }

    pub fn last_check(&self) -> Option<u64> {
        self.last_check
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peer(i: u8) -> PeerId {
        PeerId([i; 32])
    }

    #[test]
    fn lists_everyone_before_first_check() {
        let mut d = DiscoveryRegistry::new(30);
        for i in 0..5 {
            d.register(peer(i), format!("10.0.0.{i}:7000"));
        }
        assert_eq!(d.list_peers().len(), 5);
        assert!(d.health_tick(0, |p| p.0[0] >= 2));
        assert_eq!(d.list_peers().len(), 3);
        assert!(!d.health_tick(10, |_| true));
        assert_eq!(d.list_peers().len(), 3);
        assert!(d.health_tick(30, |_| true));
        assert_eq!(d.list_peers().len(), 5);
    }

    #[test]
    fn re_registered_peer_waits_for_next_check() {
        let mut d = DiscoveryRegistry::new(5);
        d.register(peer(1), "a");
        d.health_tick(0, |_| false);
        assert!(d.list_peers().is_empty());
        d.register(peer(1), "a");
        assert!(d.list_peers().is_empty());
        d.health_tick(5, |_| true);
        assert_eq!(d.list_peers().len(), 1);
    }
}
