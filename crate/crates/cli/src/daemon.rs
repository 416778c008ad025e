//! Networked daemon: proxies the block and pin API to the configured
//! backends and serves repair-worker requests.

use std::collections::BTreeMap;
use std::sync::Arc;

use entangled_core::connector::http::kind_from_name;
use entangled_core::connector::Connector;
use entangled_core::repair::wire::RepairRequest;
use entangled_core::repair::worker_repair;
use entangled_core::{Block, BlockId, Error, Result};
use tiny_http::{Method, Request, Response, Server};

pub fn bind(addr: &str) -> Result<Server> {
    Server::http(addr).map_err(|e| Error::BackendUnavailable(format!("cannot bind {addr}: {e}")))
}

/// Serve requests until the listener is closed.
pub fn serve(server: Server, backend: Arc<dyn Connector + Send + Sync>) {
    for req in server.incoming_requests() {
        let backend = backend.clone();
        std::thread::spawn(move || handle(&*backend, req));
    }
}

fn status_of(e: &Error) -> u16 {
    match e {
        Error::NotFound(_) | Error::NotPinned(_) => 404,
        Error::MalformedMessage(_) | Error::InvalidId(_) | Error::IntegrityMismatch(_) => 400,
        _ => 502,
    }
}

fn handle(backend: &dyn Connector, mut req: Request) {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let q: BTreeMap<&str, &str> = query.split('&').filter_map(|kv| kv.split_once('=')).collect();
    let mut body = Vec::new();
    let _ = req.as_reader().read_to_end(&mut body);
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    let result: Result<Vec<u8>> = match (req.method(), parts.as_slice()) {
        (Method::Get, ["health"]) => Ok(b"ok".to_vec()),
        (Method::Put, ["block"]) => match q.get("kind").and_then(|k| kind_from_name(k)) {
            Some(kind) => backend.put(&Block(body), kind).map(|id| id.to_string().into_bytes()),
            None => Err(Error::MalformedMessage("missing or unknown kind".into())),
        },
        (Method::Get, ["block", id]) => id.parse::<BlockId>().and_then(|id| backend.get(&id)).map(Block::into_bytes),
        (Method::Post, ["pin", id]) => {
            let rf = |k: &str| q.get(k).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| Error::MalformedMessage(format!("missing {k}")));
            id.parse::<BlockId>().and_then(|id| backend.pin(&id, rf("rf-min")?, rf("rf-max")?)).map(|_| Vec::new())
        }
        (Method::Delete, ["pin", id]) => id.parse::<BlockId>().and_then(|id| backend.unpin(&id)).map(|_| Vec::new()),
        (Method::Post, ["repair"]) => RepairRequest::decode(&body).map(|r| worker_repair(backend, &r).encode()),
        _ => {
            let _ = req.respond(Response::from_data(Vec::new()).with_status_code(404));
            return;
        }
    };
    let response = match result {
        Ok(bytes) => Response::from_data(bytes),
        Err(e) => {
            log::debug!("{} {path}: {e}", req.method());
            Response::from_data(e.to_string().into_bytes()).with_status_code(status_of(&e))
        }
    };
    let _ = req.respond(response);
}
