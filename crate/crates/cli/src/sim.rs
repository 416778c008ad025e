//! Embedded simulation mode: a scenario file plus a state directory that
//! carries the cluster between invocations.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use entangled_core::cluster::{Cluster, ClusterState, PeerId, Scenario};
use entangled_core::store::{BlockStore, FsStore};
use entangled_core::{BlockId, Error, Result};
use parking_lot::RwLock;

pub struct SimWorld {
    dir: PathBuf,
    pub cluster: Arc<RwLock<Cluster>>,
    pub scenario: Scenario,
    /// Files that asked for monitoring at upload.
    pub monitored: BTreeSet<BlockId>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Config(format!("state file: {e}"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl SimWorld {
    /// Load the saved cluster from `state`, or start one from the scenario.
    /// The state directory defaults to `<scenario>.state` next to the file.
    pub fn open(scenario_path: &Path, state: Option<&Path>) -> Result<Self> {
        let scenario = Scenario::load(scenario_path)?;
        let dir = state.map(Path::to_path_buf).unwrap_or_else(|| scenario_path.with_extension("state"));
        fs::create_dir_all(&dir)?;
        let peers_dir = dir.join("peers");
        let store = |i: usize| -> Result<Arc<dyn BlockStore>> { Ok(Arc::new(FsStore::open(peers_dir.join(i.to_string()))?)) };
        let saved = dir.join("cluster.json");
        let cluster = if saved.exists() {
            let state: ClusterState = serde_json::from_slice(&fs::read(&saved)?).map_err(json_err)?;
            Cluster::restore(state, store)?
        } else {
            Cluster::with_stores(&scenario, store)?
        };
        let monitored = match fs::read(dir.join("monitored.json")) {
            Ok(bytes) => serde_json::from_slice::<Vec<String>>(&bytes).map_err(json_err)?.iter().map(|s| s.parse()).collect::<Result<_>>()?,
            Err(_) => BTreeSet::new(),
        };
        Ok(Self { dir, cluster: Arc::new(RwLock::new(cluster)), scenario, monitored })
    }

    /// Peer by index or hex id; peer 0 when unspecified.
    pub fn peer(&self, address: Option<&str>) -> Result<PeerId> {
        let ids = self.cluster.read().peer_ids();
        match address {
            None => ids.first().copied().ok_or_else(|| Error::Config("scenario has no peers".into())),
            Some(a) => match a.parse::<usize>() {
                Ok(i) => ids.get(i).copied().ok_or_else(|| Error::Config(format!("no peer with index {i}"))),
                Err(_) => {
                    let id: PeerId = a.parse()?;
                    ids.contains(&id).then_some(id).ok_or_else(|| Error::Config(format!("unknown peer {a}")))
                }
            },
        }
    }

    pub fn save(&self) -> Result<()> {
        let mut cluster = self.cluster.write();
        let state = serde_json::to_vec(&cluster.state()).map_err(json_err)?;
        write_atomic(&self.dir.join("cluster.json"), &state)?;
        let monitored: Vec<String> = self.monitored.iter().map(|id| id.to_string()).collect();
        write_atomic(&self.dir.join("monitored.json"), &serde_json::to_vec(&monitored).map_err(json_err)?)?;
        let mut log = fs::OpenOptions::new().create(true).append(true).open(self.dir.join("events.jsonl"))?;
        log.write_all(cluster.events.to_jsonl().as_bytes())?;
        cluster.events.clear();
        Ok(())
    }
}
