use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use entangled_core::connector::stub::StubServer;
use entangled_core::dag::DagConfig;
use entangled_core::edag::{encode_file, UploadOptions};
use entangled_core::lattice::CodingParams;
use entangled_core::BlockId;
use tempfile::TempDir;

const CODING: [&str; 12] = ["--alpha", "3", "--s", "5", "--p", "5", "--chunk-size", "1024", "--fanout", "8", "--replication", "3"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_entangled"));
    c.env_remove("ES_SIM").env_remove("ES_STATE");
    c
}

struct Sim {
    dir: TempDir,
}

impl Sim {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("scenario.toml"), "seed = 4\npeers = 8\n").unwrap();
        Self { dir }
    }

    fn run(&self, args: &[&str]) -> Output {
        let scenario = self.dir.path().join("scenario.toml");
        bin().arg("--sim").arg(scenario).args(args).output().unwrap()
    }

    fn file(&self, name: &str, bytes: &[u8]) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Delete every stored copy of `id` from the peers' directories.
    fn erase(&self, id: &BlockId) -> usize {
        let mut removed = 0;
        let peers = self.dir.path().join("scenario.state").join("peers");
        for peer in std::fs::read_dir(peers).unwrap() {
            let hex = id.digest_hex();
            let p = peer.unwrap().path().join(&hex[..2]).join(id.to_string());
            if p.exists() {
                std::fs::remove_file(p).unwrap();
                removed += 1;
            }
        }
        removed
    }
}

fn kv(out: &Output, key: &str) -> Option<String> {
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

fn sample(len: usize) -> Vec<u8> {
    (0..len as u32).map(|i| (i.wrapping_mul(2654435761) >> 9) as u8).collect()
}

fn encoded(bytes: &[u8]) -> entangled_core::edag::EncodedFile {
    encode_file(bytes, &UploadOptions::new(CodingParams::new(3, 5, 5).unwrap(), DagConfig::new(1024, 8).unwrap())).unwrap()
}

fn upload(sim: &Sim, path: &Path, extra: &[&str]) -> (String, String) {
    let mut args = vec!["upload"];
    args.extend(CODING);
    args.extend(extra);
    let path = path.to_str().unwrap().to_string();
    args.push(&path);
    let out = sim.run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (kv(&out, "file_id").unwrap(), kv(&out, "metadata_id").unwrap())
}

#[test]
fn upload_is_deterministic_and_downloads_back() {
    let sim = Sim::new();
    let bytes = sample(50_000);
    let f = sim.file("in.bin", &bytes);
    let first = upload(&sim, &f, &[]);
    let second = upload(&sim, &f, &[]);
    assert_eq!(first, second);
    let out = sim.run(&["download", "--metacid", &first.1, "--output", sim.path("out.bin").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(sim.path("out.bin")).unwrap(), bytes);
    assert_eq!(kv(&out, "missing").as_deref(), Some("0"));
    let plain = sim.run(&["download", "--cid", &first.0, "--output", sim.path("plain.bin").to_str().unwrap()]);
    assert!(plain.status.success());
    assert_eq!(std::fs::read(sim.path("plain.bin")).unwrap(), bytes);
}

#[test]
fn unequal_s_and_p_is_rejected() {
    let sim = Sim::new();
    let f = sim.file("in.bin", b"abc");
    let out = sim.run(&["upload", "--alpha", "3", "--s", "5", "--p", "7", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(kv(&out, "error").unwrap().contains("unsupported coding parameters"));
}

#[test]
fn usage_errors_exit_64() {
    let out = bin().args(["upload", "--bogus", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = bin().args(["daemon", "--port", "1234"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--discovery"));
    let out = bin().args(["download", "--output", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn repair_exit_codes_and_recovery_upload() {
    let sim = Sim::new();
    let bytes = sample(40_000);
    let f = sim.file("in.bin", &bytes);
    let (root, meta) = upload(&sim, &f, &[]);
    let enc = encoded(&bytes);
    let leaf = enc.data[4].0;
    assert!(sim.erase(&leaf) >= 1);
    let out_path = sim.path("out.bin");
    let out = sim.run(&["download", "--metacid", &meta, "--depth", "0", "--output", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(kv(&out, "failed_positions").as_deref(), Some("5"));
    let out = sim.run(&["download", "--cid", &root, "--output", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = sim.run(&["download", "--metacid", &meta, "--upload-recovery", "true", "--output", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kv(&out, "recovered").as_deref(), Some("1"));
    assert_eq!(std::fs::read(&out_path).unwrap(), bytes);
    // The rebuilt leaf is stored and pinned again.
    let state = std::fs::read_to_string(sim.path("scenario.state/cluster.json")).unwrap();
    assert!(state.contains(&leaf.to_string()));
    let out = sim.run(&["download", "--metacid", &meta, "--depth", "0", "--output", out_path.to_str().unwrap()]);
    assert!(out.status.success());
}

#[test]
fn repair_command_summaries() {
    let sim = Sim::new();
    let bytes = sample(40_000);
    let f = sim.file("in.bin", &bytes);
    let (_, meta) = upload(&sim, &f, &[]);
    let out = sim.run(&["repair", "--metacid", &meta, "--peers", "3"]);
    assert!(out.status.success());
    assert_eq!(kv(&out, "status").as_deref(), Some("nothing to repair"));
    let enc = encoded(&bytes);
    for k in [1, 9, 17] {
        sim.erase(&enc.data[k].0);
    }
    let out = sim.run(&["repair", "--metacid", &meta, "--peers", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kv(&out, "status").as_deref(), Some("repaired"));
    assert_eq!(kv(&out, "recovered").as_deref(), Some("3"));
    assert_eq!(kv(&out, "workers").as_deref(), Some("3"));
    let out = sim.run(&["repair", "--metacid", &meta]);
    assert_eq!(kv(&out, "status").as_deref(), Some("nothing to repair"));
    // A missing interior node of the file DAG aborts.
    sim.erase(&enc.file_nodes[0].id);
    sim.erase(&enc.data[0].0);
    let out = sim.run(&["repair", "--metacid", &meta]);
    assert_eq!(out.status.code(), Some(4));
    // A missing metadata block.
    sim.erase(&meta.parse().unwrap());
    let out = sim.run(&["download", "--metacid", &meta, "--output", sim.path("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sim_daemon_monitors_and_repairs() {
    let sim = Sim::new();
    let bytes = sample(40_000);
    let f = sim.file("in.bin", &bytes);
    let (_, meta) = upload(&sim, &f, &["--monitor"]);
    let enc = encoded(&bytes);
    let mut parities: Vec<BlockId> = enc.parity_blocks().map(|(id, _)| id).collect();
    parities.sort();
    parities.dedup();
    for id in &parities[..parities.len() / 4] {
        sim.erase(id);
    }
    let out = sim.run(&["daemon", "--ticks", "70", "--sample-fraction", "1.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kv(&out, "monitored_files").as_deref(), Some("1"));
    assert_eq!(kv(&out, "repairs").as_deref(), Some("1"));
    assert_eq!(kv(&out, "now").as_deref(), Some("70"));
    let out = sim.run(&["repair", "--metacid", &meta]);
    assert_eq!(kv(&out, "status").as_deref(), Some("nothing to repair"));
    let events = std::fs::read_to_string(sim.path("scenario.state/events.jsonl")).unwrap();
    assert!(events.lines().any(|l| l.contains("\"action\":\"repair\"")));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Daemon(Child);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn daemon_args(stub: &StubServer, port: u16) -> Vec<String> {
    let (ip, sp) = (stub.addr.ip().to_string(), stub.addr.port().to_string());
    [
        "daemon",
        "--cluster-ip",
        &ip,
        "--cluster-port",
        &sp,
        "--community-ip",
        "127.0.0.1",
        "--port",
        &port.to_string(),
        "--discovery",
        &stub.addr.to_string(),
        "--ipfs-ip",
        &ip,
        "--ipfs-port",
        &sp,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn spawn_daemon(stub: &StubServer) -> (Daemon, String) {
    let port = free_port();
    let mut child = bin().args(daemon_args(stub, port)).stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut listening = None;
    for line in lines.by_ref() {
        if let Some(a) = line.unwrap().strip_prefix("listening=") {
            listening = Some(a.to_string());
            break;
        }
    }
    (Daemon(child), listening.expect("daemon started"))
}

#[test]
fn network_daemons_register_serve_and_collaborate() {
    let stub = StubServer::start("127.0.0.1:0").unwrap();
    let (_a, addr_a) = spawn_daemon(&stub);
    let (_b, addr_b) = spawn_daemon(&stub);
    let registered: Vec<String> = stub.state.peers.lock().values().cloned().collect();
    assert!(registered.contains(&addr_a) && registered.contains(&addr_b));

    let dir = TempDir::new().unwrap();
    let bytes = sample(30_000);
    let input = dir.path().join("in.bin");
    std::fs::write(&input, &bytes).unwrap();
    let mut args = vec!["upload".to_string(), "--address".into(), addr_a.clone()];
    args.extend(CODING.iter().map(|s| s.to_string()));
    args.push(input.to_str().unwrap().into());
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = kv(&out, "metadata_id").unwrap();
    assert!(!stub.state.pins.lock().is_empty());

    let enc = encoded(&bytes);
    for k in [2, 3, 11] {
        use entangled_core::store::BlockStore;
        stub.state.store.delete(&enc.data[k].0).unwrap();
    }
    let out =
        bin().args(["repair", "--address", &addr_a, "--metacid", &meta, "--peers", "3", "--discovery", &stub.addr.to_string()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kv(&out, "recovered").as_deref(), Some("3"));
    // Only the other daemon is a worker: the budget of 3 clamps to 1.
    assert_eq!(kv(&out, "workers").as_deref(), Some("1"));

    let output = dir.path().join("out.bin");
    let out =
        bin().args(["download", "--address", &addr_b, "--metacid", &meta, "--depth", "0", "--output", output.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&output).unwrap(), bytes);
}

#[test]
fn taken_port_is_a_bind_error() {
    let stub = StubServer::start("127.0.0.1:0").unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let out = bin().args(daemon_args(&stub, port)).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(kv(&out, "error").unwrap().contains("cannot bind"));
}

#[test]
fn unreachable_discovery_fails() {
    let stub = StubServer::start("127.0.0.1:0").unwrap();
    let mut args = daemon_args(&stub, free_port());
    let at = args.iter().position(|a| a == "--discovery").unwrap();
    args[at + 1] = format!("127.0.0.1:{}", free_port());
    let out = bin().args(args).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(kv(&out, "error").unwrap().contains("backend unavailable"));
}

#[test]
fn env_overrides_flags() {
    let sim = Sim::new();
    let f = sim.file("in.bin", &sample(5000));
    let out = bin().env("ES_SIM", sim.path("scenario.toml")).env("ES_S", "7").args(["upload", "--p", "5", f.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(kv(&out, "error").unwrap().contains("unsupported"));
}
