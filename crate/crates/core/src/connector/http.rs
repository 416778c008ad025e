use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use super::Connector;
use crate::block::{cid_of, Block, BlockId, BlockKind};
use crate::cluster::PeerId;
use crate::error::{Error, Result};
use crate::repair::WorkerTransport;

/// Base URLs of the block node and the pinning cluster API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpEndpoints {
    pub node: String,
    pub cluster: String,
}

impl HttpEndpoints {
    pub fn new(node: (&str, u16), cluster: (&str, u16)) -> Self {
        Self { node: format!("http://{}:{}", node.0, node.1), cluster: format!("http://{}:{}", cluster.0, cluster.1) }
    }
}

pub struct HttpConnector {
    endpoints: HttpEndpoints,
    agent: ureq::Agent,
}

pub fn kind_name(kind: BlockKind) -> &'static str {
    match kind {
        BlockKind::DataLeaf => "data-leaf",
        BlockKind::DagNode => "dag-node",
        BlockKind::ParityLeaf => "parity-leaf",
        BlockKind::Metadata => "metadata",
    }
}

pub fn kind_from_name(name: &str) -> Option<BlockKind> {
    BlockKind::ALL.into_iter().find(|k| kind_name(*k) == name)
}

impl HttpConnector {
    pub fn new(endpoints: HttpEndpoints, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { endpoints, agent }
    }

    fn call(&self, req: ureq::Request, body: Option<&[u8]>) -> Result<ureq::Response> {
        let res = match body {
            Some(b) => req.send_bytes(b),
            None => req.call(),
        };
        res.map_err(unavailable)
    }
}

impl Connector for HttpConnector {
    fn put(&self, block: &Block, kind: BlockKind) -> Result<BlockId> {
        let url = format!("{}/block", self.endpoints.node);
        let res = self.call(self.agent.put(&url).query("kind", kind_name(kind)), Some(block.as_bytes()))?;
        let text = res.into_string()?;
        let id: BlockId = text.trim().parse()?;
        if id != cid_of(block, kind) {
            return Err(Error::IntegrityMismatch(id));
        }
        Ok(id)
    }

    fn get(&self, id: &BlockId) -> Result<Block> {
        let url = format!("{}/block/{id}", self.endpoints.node);
        match self.agent.get(&url).call() {
            Ok(res) => {
                let mut bytes = Vec::new();
                res.into_reader().read_to_end(&mut bytes)?;
                if !id.verify(&bytes) {
                    return Err(Error::IntegrityMismatch(*id));
                }
                Ok(Block(bytes))
            }
            Err(ureq::Error::Status(404, _)) => Err(Error::NotFound(*id)),
            Err(e) => Err(unavailable(e)),
        }
    }

    fn has(&self, id: &BlockId) -> Result<bool> {
        match self.get(id) {
            Ok(_) => Ok(true),
            Err(Error::NotFound(_)) | Err(Error::IntegrityMismatch(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn pin(&self, id: &BlockId, rf_min: usize, rf_max: usize) -> Result<()> {
        let url = format!("{}/pin/{id}", self.endpoints.cluster);
        let req = self.agent.post(&url).query("rf-min", &rf_min.to_string()).query("rf-max", &rf_max.to_string());
        match req.call() {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(404, _)) => Err(Error::NotFound(*id)),
            Err(e) => Err(unavailable(e)),
        }
    }

    fn unpin(&self, id: &BlockId) -> Result<()> {
        let url = format!("{}/pin/{id}", self.endpoints.cluster);
        match self.agent.delete(&url).call() {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(404, _)) => Err(Error::NotPinned(*id)),
            Err(e) => Err(unavailable(e)),
        }
    }
}

fn unavailable(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Status(code, r) => Error::BackendUnavailable(format!("{}: status {code}", r.get_url())),
        ureq::Error::Transport(t) => Error::BackendUnavailable(t.to_string()),
    }
}

/// Client for the discovery registry.
pub struct DiscoveryClient {
    base: String,
    agent: ureq::Agent,
}

impl DiscoveryClient {
    /// `server` is `host:port` or a full `http://` URL.
    pub fn new(server: &str, timeout: Duration) -> Self {
        let base = if server.contains("://") { server.trim_end_matches('/').to_string() } else { format!("http://{server}") };
        Self { base, agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }

    pub fn register(&self, peer: &PeerId, address: &str) -> Result<()> {
        let url = format!("{}/discovery/register", self.base);
        self.agent.post(&url).send_string(&format!("{peer} {address}")).map(|_| ()).map_err(unavailable)
    }

    pub fn list_peers(&self) -> Result<Vec<(PeerId, String)>> {
        let url = format!("{}/discovery/peers", self.base);
        let text = self.agent.get(&url).call().map_err(unavailable)?.into_string()?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (peer, addr) = l.trim().split_once(' ').ok_or_else(|| Error::MalformedMessage(l.to_string()))?;
                Ok((peer.parse()?, addr.to_string()))
            })
            .collect()
    }
}

/// Sends repair requests to worker daemons at `POST /repair`.
pub struct HttpTransport {
    peers: BTreeMap<PeerId, String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(peers: impl IntoIterator<Item = (PeerId, String)>, timeout: Duration) -> Self {
        Self { peers: peers.into_iter().collect(), agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }
}

impl WorkerTransport for HttpTransport {
    fn call(&self, peer: &PeerId, request: &[u8]) -> Result<Vec<u8>> {
        let addr = self.peers.get(peer).ok_or_else(|| Error::BackendUnavailable(format!("no address for {}", peer.short())))?;
        let res = self.agent.post(&format!("http://{addr}/repair")).send_bytes(request).map_err(unavailable)?;
        let mut out = Vec::new();
        res.into_reader().read_to_end(&mut out)?;
        Ok(out)
    }
}
