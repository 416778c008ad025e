//! Scenario files: cluster shape, failure schedule and coding defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discovery::DEFAULT_HEALTH_INTERVAL;
use super::metrics::MetricTtls;
use crate::dag::{DagConfig, DEFAULT_CHUNK_SIZE, DEFAULT_FANOUT};
use crate::error::{Error, Result};
use crate::lattice::CodingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub peers: usize,
    /// Bytes per peer.
    pub capacity: u64,
    /// Tags of peer `i`; peers past the end are untagged.
    pub tags: Vec<BTreeMap<String, String>>,
    pub health_interval: u64,
    pub metric_ttl: MetricTtls,
    pub lease_ticks: u64,
    pub failures: Vec<FailureEvent>,
    pub coding: CodingSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            peers: 20,
            capacity: 1 << 34,
            tags: Vec::new(),
            health_interval: DEFAULT_HEALTH_INTERVAL,
            metric_ttl: MetricTtls::default(),
            lease_ticks: 600,
            failures: Vec::new(),
            coding: CodingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct FailureEvent {
    pub at: u64,
    /// Fraction of all peers to kill, drawn with the scenario seed.
    pub fraction: Option<f64>,
    /// Peer indices to kill.
    pub kill: Vec<usize>,
    /// Peer indices to bring back.
    pub heal: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodingSection {
    pub alpha: u8,
    pub s: usize,
    pub p: usize,
    pub chunk_size: usize,
    pub fanout: usize,
    pub direct_replication: usize,
    pub replication: usize,
}

impl Default for CodingSection {
    fn default() -> Self {
        Self { alpha: 3, s: 5, p: 5, chunk_size: DEFAULT_CHUNK_SIZE, fanout: DEFAULT_FANOUT, direct_replication: 1, replication: 3 }
    }
}

impl CodingSection {
    pub fn params(&self) -> Result<CodingParams> {
        CodingParams::new(self.alpha, self.s, self.p)
    }

    pub fn dag(&self) -> Result<DagConfig> {
        DagConfig::new(self.chunk_size, self.fanout)
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.peers == 0 {
            return Err(Error::Config("a scenario needs at least one peer".into()));
        }
        for f in &self.failures {
            if let Some(x) = f.fraction {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Config(format!("failure fraction {x} outside [0, 1]")));
                }
            }
            if let Some(i) = f.kill.iter().chain(&f.heal).find(|i| **i >= self.peers) {
                return Err(Error::Config(format!("peer index {i} out of range")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_small_scenario() {
        let text = r#"
            seed = 7
            peers = 4
            capacity = 1000000
            tags = [{ region = "Florida" }, { region = "Florida" }, { region = "Oslo" }, { region = "Oslo" }]

            [metric_ttl]
            freespace = 30
            tag = 60

            [[failures]]
            at = 100
            kill = [1]

            [coding]
            chunk_size = 1024
            fanout = 4
        "#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.peers, 4);
        assert_eq!(s.tags[2]["region"], "Oslo");
        assert_eq!(s.failures[0].kill, vec![1]);
        assert_eq!(s.coding.alpha, 3);
        assert_eq!(s.coding.dag().unwrap().fanout, 4);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_fractions() {
        assert!(Scenario::from_toml("peerz = 3").is_err());
        assert!(Scenario::from_toml("[[failures]]\nfraction = 1.5").is_err());
        assert!(Scenario::from_toml("peers = 2\n[[failures]]\nkill = [5]").is_err());
    }
}
