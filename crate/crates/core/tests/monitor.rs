use std::collections::BTreeSet;
use std::sync::Arc;

use entangled_core::cluster::{Cluster, PeerId, Scenario};
use entangled_core::connector::SimConnector;
use entangled_core::dag::DagConfig;
use entangled_core::edag::{upload, UploadOptions, UploadReceipt};
use entangled_core::lattice::CodingParams;
use entangled_core::monitor::{MonitorConfig, MonitorRegistry, TriggerAction};
use entangled_core::{BlockId, Error};
use parking_lot::RwLock;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Setup {
    cluster: Arc<RwLock<Cluster>>,
    receipt: UploadReceipt,
    registry: MonitorRegistry,
}

fn setup(peers: usize, roots_rf: usize, cfg: MonitorConfig) -> Setup {
    let cluster = Arc::new(RwLock::new(Cluster::new(&Scenario { peers, seed: 11, ..Default::default() }).unwrap()));
    let me = cluster.read().peer_ids()[0];
    let conn = SimConnector::new(cluster.clone(), me);
    let bytes: Vec<u8> = (0..64 * 256u32).map(|i| (i.wrapping_mul(2654435761) >> 11) as u8).collect();
    let opts = UploadOptions {
        direct_replication: 1,
        internal_replication: roots_rf,
        ..UploadOptions::new(CodingParams::new(3, 4, 4).unwrap(), DagConfig::new(256, 4).unwrap())
    };
    let receipt = upload(&conn, &bytes, &opts).unwrap();
    cluster.write().gc().unwrap();
    let registry = MonitorRegistry::new(cluster.clone(), cfg).unwrap();
    Setup { cluster, receipt, registry }
}

fn full(check_interval: u64) -> MonitorConfig {
    MonitorConfig { check_interval, sample_fraction: 1.0, threshold: 0.1, ..Default::default() }
}

fn root_allocations(c: &Cluster, r: &UploadReceipt) -> BTreeSet<PeerId> {
    r.metadata.edag_roots.iter().flat_map(|(_, root)| c.pinset.get(root).unwrap().allocations.clone()).collect()
}

fn distinct_parities(r: &UploadReceipt) -> Vec<BlockId> {
    let mut v: Vec<BlockId> = r.parity_leaves.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    v.sort();
    v
}

fn erase(s: &Setup, ids: &[BlockId]) {
    let mut c = s.cluster.write();
    for id in ids {
        c.erase_everywhere(id).unwrap();
    }
}

#[test]
fn monitors_are_the_strand_root_allocatees() {
    let mut s = setup(10, 1, MonitorConfig::default());
    let meta = s.receipt.meta_id;
    assert!(s.registry.assignment(&meta).is_none());
    let a = s.registry.start_monitoring(&meta).unwrap();
    assert!((1..=3).contains(&a.monitors.len()));
    assert_eq!(a.monitors.iter().copied().collect::<BTreeSet<_>>(), root_allocations(&s.cluster.read(), &s.receipt));
    assert_eq!(s.registry.start_monitoring(&meta).unwrap(), a);
}

#[test]
fn unpinned_roots_cannot_be_monitored() {
    let mut s = setup(6, 1, MonitorConfig::default());
    let root = s.receipt.metadata.edag_roots[0].1;
    s.cluster.write().unpin(&root).unwrap();
    assert!(matches!(s.registry.start_monitoring(&s.receipt.meta_id), Err(Error::NotPinned(_))));
}

#[test]
fn criticality_tracks_missing_blocks() {
    let mut s = setup(8, 2, full(5));
    let meta = s.receipt.meta_id;
    let a = s.registry.start_monitoring(&meta).unwrap();
    let m = a.monitors[0];
    assert_eq!(s.registry.presence_check(&meta, &m).unwrap().criticality, 0.0);
    let all: Vec<BlockId> = s.receipt.data_leaves.iter().chain(&s.receipt.parity_leaves).copied().collect();
    erase(&s, &all);
    s.cluster.write().advance(8);
    let v = s.registry.presence_check(&meta, &m).unwrap();
    assert_eq!(v.criticality, 1.0);
    assert_eq!(v.sampled, 64 * 4);
    assert_eq!(v.failed_regions, (1..=4).collect());
    assert_eq!(v.failure_interval, Some(8.0 / 256.0));
}

#[test]
fn sampled_criticality_stays_within_binomial_bounds() {
    let mut s = setup(8, 2, MonitorConfig { sample_fraction: 0.2, seed: 5, ..full(1) });
    let meta = s.receipt.meta_id;
    let m = s.registry.start_monitoring(&meta).unwrap().monitors[0];
    // Erase a fixed quarter of the data leaves: 16 of 256 positions.
    let erased: Vec<BlockId> = s.receipt.data_leaves.iter().step_by(4).copied().collect();
    erase(&s, &erased);
    let p = 16.0 / 256.0;
    let k = (0.2f64 * 256.0).ceil();
    let bound = 1.96 * (p * (1.0 - p) / k).sqrt();
    let mut inside = 0;
    let mut sum = 0.0;
    let rounds = 200;
    for _ in 0..rounds {
        s.cluster.write().step();
        let v = s.registry.presence_check(&meta, &m).unwrap();
        assert_eq!(v.sampled, k as usize);
        inside += usize::from((v.criticality - p).abs() <= bound);
        sum += v.criticality;
    }
    // Sampling without replacement is tighter than the binomial bound.
    assert!(inside as f64 >= 0.95 * rounds as f64, "{inside}/{rounds}");
    assert!((sum / rounds as f64 - p).abs() < 0.01);
}

#[test]
fn low_criticality_does_not_trigger() {
    let mut s = setup(8, 1, full(5));
    let meta = s.receipt.meta_id;
    s.registry.start_monitoring(&meta).unwrap();
    // 12 of 256 positions: under 0.05.
    let parities = distinct_parities(&s.receipt);
    erase(&s, &parities[..12]);
    for _ in 0..5 {
        s.cluster.write().step();
    }
    let t = s.registry.tick();
    assert!(!t.checks.is_empty());
    assert!(t.checks.iter().all(|(_, _, c)| *c < 0.1));
    assert!(t.repairs.is_empty());
}

#[test]
fn crossing_the_threshold_repairs_once() {
    let mut s = setup(10, 2, full(5));
    let meta = s.receipt.meta_id;
    let a = s.registry.start_monitoring(&meta).unwrap();
    assert!(a.monitors.len() >= 2);
    let parities = distinct_parities(&s.receipt);
    erase(&s, &parities[..40]);
    for _ in 0..5 {
        s.cluster.write().step();
    }
    let t = s.registry.tick();
    // Every monitor saw the same loss in the same tick.
    assert_eq!(t.checks.len(), a.monitors.len());
    assert!(t.checks.iter().all(|(_, _, c)| *c >= 0.1));
    assert_eq!(t.repairs.len(), 1);
    let actions: Vec<TriggerAction> = t.actions.iter().map(|(_, _, x)| *x).collect();
    assert_eq!(actions.iter().filter(|x| **x == TriggerAction::Repaired).count(), 1);
    assert!(actions.iter().skip(1).all(|x| *x == TriggerAction::Suppressed));
    let c = s.cluster.read();
    assert!(parities.iter().all(|id| c.has(id)));
    assert_eq!(c.lease(&meta).unwrap().holder, t.actions[0].1);
}

#[test]
fn killing_a_monitor_hands_its_view_over() {
    let mut s = setup(10, 2, full(5));
    let meta = s.receipt.meta_id;
    let a = s.registry.start_monitoring(&meta).unwrap();
    let victim = a.monitors[0];
    let parities = distinct_parities(&s.receipt);
    erase(&s, &parities[..3]);
    let before = s.registry.presence_check(&meta, &victim).unwrap();
    assert!(before.observed_missing.len() >= 3);
    s.cluster.write().fail_peers(&[victim]);
    for _ in 0..61 {
        s.cluster.write().step();
    }
    let after = s.registry.handover_on_monitor_failure(&victim).unwrap();
    let now: BTreeSet<PeerId> = after[0].monitors.iter().copied().collect();
    assert!(!now.contains(&victim));
    assert_eq!(now, root_allocations(&s.cluster.read(), &s.receipt));
    let c = s.cluster.read();
    for (_, root) in &s.receipt.metadata.edag_roots {
        assert_eq!(c.live_replicas(root).len(), 2);
    }
    drop(c);
    for m in &now {
        assert_eq!(s.registry.view(&meta, m).unwrap().observed_missing, before.observed_missing);
    }
}

#[test]
fn losing_every_root_replica_is_data_loss() {
    let mut s = setup(10, 1, full(5));
    let meta = s.receipt.meta_id;
    let a = s.registry.start_monitoring(&meta).unwrap();
    s.cluster.write().fail_peers(&a.monitors);
    for _ in 0..61 {
        s.cluster.write().step();
    }
    assert!(matches!(s.registry.handover_on_monitor_failure(&a.monitors[0]), Err(Error::DataLost(_))));
    assert!(!s.registry.tick().lost.is_empty());
}

#[test]
fn monitor_set_follows_root_allocations() {
    for seed in 0..5u64 {
        let mut s = setup(12, 2, full(7));
        let meta = s.receipt.meta_id;
        s.registry.start_monitoring(&meta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = s.cluster.read().peer_ids();
        for t in 0..400 {
            if t % 50 == 10 {
                let alive = s.cluster.read().alive_ids();
                if alive.len() > 6 {
                    s.cluster.write().fail_peers(&[*alive.choose(&mut rng).unwrap()]);
                }
            }
            if t % 90 == 80 {
                let pick = *ids.choose(&mut rng).unwrap();
                s.cluster.write().heal_peer(&pick);
            }
            s.cluster.write().step();
            let report = s.registry.tick();
            if !report.lost.is_empty() {
                break;
            }
            let monitors: BTreeSet<PeerId> = s.registry.assignment(&meta).unwrap().monitors.iter().copied().collect();
            assert_eq!(monitors, root_allocations(&s.cluster.read(), &s.receipt), "seed {seed} tick {t}");
        }
    }
}
