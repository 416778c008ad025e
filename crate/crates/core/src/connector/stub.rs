//! Minimal in-process HTTP block store and pin API, for contract tests and
//! for running the CLI without a real cluster.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use tiny_http::{Method, Request, Response, Server};

use super::http::kind_from_name;
use crate::block::{cid_of, Block, BlockId};
use crate::store::{BlockStore, MemoryStore};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedCall {
    pub method: String,
    pub path: String,
    pub rf: Option<(usize, usize)>,
}

#[derive(Default)]
pub struct StubState {
    pub store: MemoryStore,
    pub pins: Mutex<BTreeMap<BlockId, (usize, usize)>>,
    pub calls: Mutex<Vec<RecordedCall>>,
    pub peers: Mutex<BTreeMap<String, String>>,
    pub delay: Mutex<Duration>,
    /// Blocks served with their first byte flipped.
    pub corrupt: Mutex<BTreeSet<BlockId>>,
}

pub struct StubServer {
    pub addr: SocketAddr,
    pub state: Arc<StubState>,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind to `addr` (use port 0 for an ephemeral port) and serve.
    pub fn start(addr: &str) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let addr = server.server_addr().to_ip().ok_or_else(|| std::io::Error::other("not an ip listener"))?;
        let state = Arc::new(StubState::default());
        let (srv, st) = (server.clone(), state.clone());
        let handle = std::thread::spawn(move || {
            for req in srv.incoming_requests() {
                let st = st.clone();
                std::thread::spawn(move || handle(&st, req));
            }
        });
        Ok(Self { addr, state, server, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.state.calls.lock().clone()
    }

    pub fn set_delay(&self, d: Duration) {
        *self.state.delay.lock() = d;
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn query(url: &str) -> BTreeMap<String, String> {
    url.split_once('?')
        .map(|(_, q)| q.split('&').filter_map(|kv| kv.split_once('=')).map(|(k, v)| (k.to_string(), v.to_string())).collect())
        .unwrap_or_default()
}

fn handle(st: &StubState, mut req: Request) {
    let delay = *st.delay.lock();
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    let url = req.url().to_string();
    let path = url.split('?').next().unwrap_or("").to_string();
    let q = query(&url);
    let rf = match (q.get("rf-min").and_then(|v| v.parse().ok()), q.get("rf-max").and_then(|v| v.parse().ok())) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    st.calls.lock().push(RecordedCall { method: req.method().to_string(), path: path.clone(), rf });
    let mut body = Vec::new();
    let _ = req.as_reader().read_to_end(&mut body);
    let (status, out): (u16, Vec<u8>) = route(st, req.method(), &path, &q, rf, body);
    let _ = req.respond(Response::from_data(out).with_status_code(status));
}

fn route(st: &StubState, method: &Method, path: &str, q: &BTreeMap<String, String>, rf: Option<(usize, usize)>, body: Vec<u8>) -> (u16, Vec<u8>) {
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, parts.as_slice()) {
        (Method::Put, ["block"]) => {
            let Some(kind) = q.get("kind").and_then(|k| kind_from_name(k)) else {
                return (400, b"missing or unknown kind".to_vec());
            };
            let block = Block(body);
            let id = cid_of(&block, kind);
            match st.store.put(id, &block) {
                Ok(()) => (200, id.to_string().into_bytes()),
                Err(e) => (500, e.to_string().into_bytes()),
            }
        }
        (Method::Get, ["block", id]) => match id.parse::<BlockId>() {
            Ok(id) => match st.store.get(&id) {
                Ok(b) => {
                    let mut bytes = b.into_bytes();
                    if st.corrupt.lock().contains(&id) {
                        if let Some(x) = bytes.first_mut() {
                            *x ^= 0xff;
                        }
                    }
                    (200, bytes)
                }
                Err(_) => (404, Vec::new()),
            },
            Err(_) => (400, b"bad id".to_vec()),
        },
        (Method::Post, ["pin", id]) => match (id.parse::<BlockId>(), rf) {
            (Ok(id), Some(rf)) if st.store.has(&id) => {
                st.pins.lock().insert(id, rf);
                (200, Vec::new())
            }
            (Ok(_), Some(_)) => (404, Vec::new()),
            _ => (400, b"bad pin request".to_vec()),
        },
        (Method::Delete, ["pin", id]) => match id.parse::<BlockId>() {
            Ok(id) if st.pins.lock().remove(&id).is_some() => (200, Vec::new()),
            Ok(_) => (404, Vec::new()),
            Err(_) => (400, b"bad id".to_vec()),
        },
        (Method::Post, ["discovery", "register"]) => {
            let text = String::from_utf8_lossy(&body).to_string();
            match text.trim().split_once(' ') {
                Some((peer, addr)) => {
                    st.peers.lock().insert(peer.to_string(), addr.to_string());
                    (200, Vec::new())
                }
                None => (400, b"expected '<peer> <address>'".to_vec()),
            }
        }
        (Method::Get, ["discovery", "peers"]) => {
            let text: String = st.peers.lock().iter().map(|(p, a)| format!("{p} {a}\n")).collect();
            (200, text.into_bytes())
        }
        _ => (404, Vec::new()),
    }
}
