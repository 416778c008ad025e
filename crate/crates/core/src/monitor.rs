//! File-health monitoring. The allocatees of a file's strand-root pins act
//! as its monitors: they sample block presence on a schedule and start a
//! collaborative repair once the observed loss crosses a threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::block::BlockId;
use crate::cluster::{Cluster, PeerId};
use crate::connector::{ConnectorSource, SimConnector};
use crate::edag::{fetch_metadata, FileMetadata};
use crate::error::{Error, Result};
use crate::repair::download::{scan_file, scan_parities};
use crate::repair::{collaborative_repair, CollabOptions, CollabResult, Depth, Scope, SimTransport, Target};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub check_interval: u64,
    pub sample_fraction: f64,
    pub threshold: f64,
    pub depth: Depth,
    pub peer_budget: usize,
    pub seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { check_interval: 60, sample_fraction: 0.25, threshold: 0.1, depth: Depth::Unbounded, peer_budget: 3, seed: 0 }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config(format!("sample fraction {} outside (0, 1]", self.sample_fraction)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.check_interval == 0 {
            return Err(Error::Config("check interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorAssignment {
    pub file: BlockId,
    pub monitors: Vec<PeerId>,
    pub check_interval: u64,
    pub sample_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileHealthView {
    pub observed_missing: BTreeSet<Target>,
    pub last_check: u64,
    pub sampled: usize,
    pub criticality: f64,
    /// Lattice rows holding a missing position. Recorded, not acted upon.
    pub failed_regions: BTreeSet<usize>,
    /// Ticks per newly observed failure since the previous check, when any
    /// appeared. Recorded, not acted upon.
    pub failure_interval: Option<f64>,
}

/// What a monitor did about its view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerAction {
    BelowThreshold,
    Stale,
    /// Another monitor holds the file's coordinator lease.
    Suppressed,
    Repaired,
    RepairFailed,
}

impl TriggerAction {
    pub fn name(self) -> &'static str {
        match self {
            TriggerAction::BelowThreshold => "none",
            TriggerAction::Stale => "stale",
            TriggerAction::Suppressed => "suppressed",
            TriggerAction::Repaired => "repair",
            TriggerAction::RepairFailed => "repair_failed",
        }
    }
}

struct FileMonitor {
    assignment: MonitorAssignment,
    meta: FileMetadata,
    roots: Vec<BlockId>,
    probes: Vec<(Target, BlockId)>,
    views: BTreeMap<PeerId, FileHealthView>,
}

/// Per-tick summary of the monitor duties.
#[derive(Debug, Clone, Default)]
pub struct MonitorTick {
    pub checks: Vec<(BlockId, PeerId, f64)>,
    pub actions: Vec<(BlockId, PeerId, TriggerAction)>,
    pub repairs: Vec<(BlockId, CollabResult)>,
    pub handovers: Vec<(BlockId, PeerId, PeerId)>,
    pub lost: Vec<(BlockId, BlockId)>,
}

/// Monitoring state of every file that asked for it.
pub struct MonitorRegistry {
    pub config: MonitorConfig,
    cluster: Arc<RwLock<Cluster>>,
    files: BTreeMap<BlockId, FileMonitor>,
}

fn root_allocations(cluster: &Cluster, roots: &[BlockId]) -> Result<Vec<PeerId>> {
    let mut out = Vec::new();
    for root in roots {
        let entry = cluster.pinset.get(root).filter(|e| !e.allocations.is_empty()).ok_or(Error::NotPinned(*root))?;
        for p in &entry.allocations {
            if !out.contains(p) {
                out.push(*p);
            }
        }
    }
    Ok(out)
}

impl MonitorRegistry {
    pub fn new(cluster: Arc<RwLock<Cluster>>, config: MonitorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, cluster, files: BTreeMap::new() })
    }

    pub fn assignment(&self, file: &BlockId) -> Option<&MonitorAssignment> {
        self.files.get(file).map(|f| &f.assignment)
    }

    pub fn view(&self, file: &BlockId, monitor: &PeerId) -> Option<&FileHealthView> {
        self.files.get(file)?.views.get(monitor)
    }

    pub fn files(&self) -> impl Iterator<Item = &BlockId> {
        self.files.keys()
    }

    /// Register `meta_id` for monitoring; a repeated call returns the
    /// existing assignment.
    pub fn start_monitoring(&mut self, meta_id: &BlockId) -> Result<MonitorAssignment> {
        if let Some(f) = self.files.get(meta_id) {
            return Ok(f.assignment.clone());
        }
        let conn = SimConnector::new(self.cluster.clone(), PeerId([0; 32]));
        let source = ConnectorSource(&conn);
        let meta = fetch_metadata(&source, meta_id)?;
        let roots: Vec<BlockId> = meta.edag_roots.iter().map(|(_, r)| *r).collect();
        let monitors = root_allocations(&self.cluster.read(), &roots)?;
        let mut probes: Vec<(Target, BlockId)> =
            scan_file(&source, &meta)?.into_iter().enumerate().map(|(i, (id, _))| (Target::Data(i + 1), id)).collect();
        probes.extend(scan_parities(&source, &meta)?.into_iter().map(|(edge, id, _)| (Target::Parity(edge), id)));
        let assignment = MonitorAssignment {
            file: *meta_id,
            monitors: monitors.clone(),
            check_interval: self.config.check_interval,
            sample_fraction: self.config.sample_fraction,
        };
        let now = self.cluster.read().now();
        let views = monitors.iter().map(|m| (*m, FileHealthView { last_check: now, ..Default::default() })).collect();
        self.files.insert(*meta_id, FileMonitor { assignment: assignment.clone(), meta, roots, probes, views });
        self.cluster.write().events.push(now, "monitor_start", json!({ "file": meta_id.to_string(), "monitors": monitors.len() }));
        Ok(assignment)
    }

    /// Sample block presence for `file` as seen by `monitor` at the current tick.
    pub fn presence_check(&mut self, file: &BlockId, monitor: &PeerId) -> Result<FileHealthView> {
        let fm = self.files.get_mut(file).ok_or(Error::NotPinned(*file))?;
        let cluster = self.cluster.read();
        let now = cluster.now();
        let total = fm.meta.n * (1 + fm.meta.params.alpha as usize);
        let k = ((self.config.sample_fraction * total as f64).ceil() as usize).clamp(1, total);
        let mut seed = self.config.seed ^ now.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for chunk in monitor.0.chunks(8).chain(file.digest.chunks(8)) {
            seed = seed.rotate_left(17) ^ u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut missing = BTreeSet::new();
        let mut lost = 0;
        for i in sample(&mut rng, total, k) {
            // Positions the start-up scan could not place (unreadable eDAG
            // subtrees) count as missing.
            match fm.probes.get(i) {
                Some((target, id)) if !cluster.has(id) => {
                    missing.insert(*target);
                    lost += 1;
                }
                Some(_) => {}
                None => lost += 1,
            }
        }
        let s = fm.meta.params.s;
        let row = |i: usize| (i - 1) % s + 1;
        let failed_regions = missing
            .iter()
            .map(|t| match t {
                Target::Data(i) => row(*i),
                Target::Parity(e) => row(e.from),
            })
            .collect();
        let failure_interval = fm.views.get(monitor).and_then(|prev| {
            let fresh = missing.difference(&prev.observed_missing).count();
            (fresh > 0 && now > prev.last_check).then(|| (now - prev.last_check) as f64 / fresh as f64)
        });
        let view = FileHealthView {
            observed_missing: missing,
            last_check: now,
            sampled: k,
            criticality: (lost as f64 / k as f64).clamp(0.0, 1.0),
            failed_regions,
            failure_interval,
        };
        fm.views.insert(*monitor, view.clone());
        Ok(view)
    }

    /// Start one collaborative repair for `file` if `monitor`'s view calls
    /// for it and no other monitor is already repairing.
    pub fn maybe_trigger_repair(&mut self, file: &BlockId, monitor: &PeerId, view: &FileHealthView) -> Result<(TriggerAction, Option<CollabResult>)> {
        if !self.files.contains_key(file) {
            return Err(Error::NotPinned(*file));
        }
        let now = self.cluster.read().now();
        let action = if now.saturating_sub(view.last_check) > self.config.check_interval {
            TriggerAction::Stale
        } else if view.sampled == 0 || view.criticality < self.config.threshold {
            TriggerAction::BelowThreshold
        } else if !self.cluster.write().try_acquire_lease(file, monitor) {
            TriggerAction::Suppressed
        } else {
            let peers: Vec<PeerId> = self.cluster.read().discovery.list_peers().into_iter().map(|(p, _)| p).collect();
            let conn = SimConnector::new(self.cluster.clone(), *monitor);
            let transport = SimTransport { cluster: self.cluster.clone() };
            let opts = CollabOptions { peer_budget: self.config.peer_budget, depth: self.config.depth, scope: Scope::Full, reupload: true };
            let res = collaborative_repair(&conn, monitor, &peers, &transport, file, &opts);
            let mut cluster = self.cluster.write();
            let (action, result) = match res {
                Ok(r) => {
                    // The lease covers the simulated duration of the repair.
                    cluster.hold_lease(file, monitor, now + (r.outcome.total_ticks().ceil() as u64).max(1));
                    let action = if r.outcome.is_complete() { TriggerAction::Repaired } else { TriggerAction::RepairFailed };
                    (action, Some(r))
                }
                Err(_) => {
                    cluster.hold_lease(file, monitor, now + 1);
                    (TriggerAction::RepairFailed, None)
                }
            };
            cluster.events.push(now, "monitor", json!({ "tick": now, "file": file.to_string(), "criticality": view.criticality, "action": action.name(), "monitor": monitor.to_string() }));
            drop(cluster);
            if result.is_some() {
                // Views are shared with the other monitors after a repair.
                let fm = self.files.get_mut(file).expect("present");
                for v in fm.views.values_mut() {
                    *v = FileHealthView { last_check: now, ..Default::default() };
                }
            }
            return Ok((action, result));
        };
        if action == TriggerAction::Suppressed {
            self.cluster.write().events.push(now, "monitor", json!({ "tick": now, "file": file.to_string(), "criticality": view.criticality, "action": action.name(), "monitor": monitor.to_string() }));
        }
        Ok((action, None))
    }

    /// Re-derive monitor sets from the current strand-root allocations.
    /// New monitors take over the view of the ones they replace.
    pub fn handover_on_monitor_failure(&mut self, dead: &PeerId) -> Result<Vec<MonitorAssignment>> {
        let files: Vec<BlockId> = self.files.iter().filter(|(_, f)| f.assignment.monitors.contains(dead)).map(|(k, _)| *k).collect();
        let mut out = Vec::new();
        for file in files {
            let (assignment, _) = self.sync(&file)?;
            out.push(assignment);
        }
        Ok(out)
    }

    fn sync(&mut self, file: &BlockId) -> Result<(MonitorAssignment, Vec<(PeerId, PeerId)>)> {
        let fm = self.files.get_mut(file).ok_or(Error::NotPinned(*file))?;
        let cluster = self.cluster.read();
        for root in &fm.roots {
            if !cluster.has(root) {
                return Err(Error::DataLost(*root));
            }
        }
        let monitors = root_allocations(&cluster, &fm.roots)?;
        drop(cluster);
        let mut handovers = Vec::new();
        if monitors != fm.assignment.monitors {
            let gone: Vec<PeerId> = fm.assignment.monitors.iter().filter(|m| !monitors.contains(m)).copied().collect();
            let freshest = gone.iter().filter_map(|m| fm.views.get(m).map(|v| (*m, v.clone()))).max_by_key(|(_, v)| v.last_check);
            for m in &monitors {
                let view = fm.views.entry(*m).or_default();
                if let Some((from, fresh)) = freshest.as_ref().filter(|(_, f)| f.last_check >= view.last_check) {
                    *view = fresh.clone();
                    handovers.push((*from, *m));
                }
            }
            fm.views.retain(|p, _| monitors.contains(p));
            fm.assignment.monitors = monitors;
        }
        Ok((fm.assignment.clone(), handovers))
    }

    /// Run every monitor duty due at the cluster's current tick.
    pub fn tick(&mut self) -> MonitorTick {
        let mut report = MonitorTick::default();
        let files: Vec<BlockId> = self.files.keys().copied().collect();
        for file in files {
            match self.sync(&file) {
                Ok((_, handovers)) => {
                    let now = self.cluster.read().now();
                    for (from, to) in handovers {
                        self.cluster.write().events.push(now, "monitor", json!({ "tick": now, "file": file.to_string(), "action": "handover", "from": from.to_string(), "monitor": to.to_string() }));
                        report.handovers.push((file, from, to));
                    }
                }
                Err(Error::DataLost(root)) => {
                    report.lost.push((file, root));
                    continue;
                }
                Err(_) => continue,
            }
            let (now, monitors) = {
                let c = self.cluster.read();
                let fm = &self.files[&file];
                (c.now(), fm.assignment.monitors.iter().filter(|m| c.is_alive(m)).copied().collect::<Vec<_>>())
            };
            let mut crossed: Vec<(PeerId, FileHealthView)> = Vec::new();
            for m in &monitors {
                let last = self.files[&file].views.get(m).map_or(0, |v| v.last_check);
                if now < last + self.config.check_interval {
                    continue;
                }
                if let Ok(view) = self.presence_check(&file, m) {
                    report.checks.push((file, *m, view.criticality));
                    self.cluster.write().events.push(now, "monitor", json!({ "tick": now, "file": file.to_string(), "criticality": view.criticality, "action": "check", "monitor": m.to_string() }));
                    if view.criticality >= self.config.threshold {
                        crossed.push((*m, view));
                    }
                }
            }
            for (m, view) in crossed {
                if let Ok((action, result)) = self.maybe_trigger_repair(&file, &m, &view) {
                    report.actions.push((file, m, action));
                    if let Some(r) = result {
                        report.repairs.push((file, r));
                    }
                }
            }
        }
        report
    }
}
