use entangled_bench::{run_recovery_sweep, run_repair_comparison, write_csv, BenchConfig, Mode, Strategy, SweepRow};
use proptest::prelude::*;

fn small(seed: u64) -> BenchConfig {
    BenchConfig { leaves: 120, repetitions: 2, seed, ..BenchConfig::default() }
}

fn all() -> Vec<Strategy> {
    vec![Strategy::Entangled, Strategy::Replication(3), Strategy::Replication(5), Strategy::Replication(7)]
}

fn csv_of<T: serde::Serialize>(rows: &[T]) -> String {
    let mut out = Vec::new();
    write_csv(rows, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn no_failures_recover_everything_and_total_failure_nothing() {
    let rows = run_recovery_sweep(&small(3), &all(), &[0.0, 1.0]).unwrap();
    assert_eq!(rows.len(), 4 * 2 * 2);
    for r in &rows {
        let expect = if r.failure_fraction == 0.0 { 100.0 } else { 0.0 };
        assert_eq!(r.pct_blocks_recovered, expect, "{r:?}");
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = csv_of(&run_recovery_sweep(&small(9), &all(), &[0.3, 0.7]).unwrap());
    let b = csv_of(&run_recovery_sweep(&small(9), &all(), &[0.3, 0.7]).unwrap());
    assert_eq!(a, b);
    assert!(a.starts_with("strategy,failure_fraction,repetition,pct_blocks_recovered\n"));
    let c = csv_of(&run_repair_comparison(&small(9), &[5], &[0.3], 3).unwrap());
    let d = csv_of(&run_repair_comparison(&small(9), &[5], &[0.3], 3).unwrap());
    assert_eq!(c, d);
    assert!(c.starts_with("mode,depth,fraction,total_time_ticks,avg_peer_time_ticks,total_blocks_downloaded,avg_blocks_per_peer\n"));
}

#[test]
fn healthy_file_costs_nothing_to_repair() {
    let rows = run_repair_comparison(&small(4), &[5], &[0.0], 3).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows.iter().filter(|r| r.mode == Mode::Single) {
        assert_eq!((r.total_time_ticks, r.avg_peer_time_ticks, r.total_blocks_downloaded, r.avg_blocks_per_peer), (0.0, 0.0, 0, 0.0));
    }
}

#[test]
fn rows_follow_job_order() {
    let rows = run_repair_comparison(&small(2), &[5, 7], &[0.2], 3).unwrap();
    let keys: Vec<(Mode, usize)> = rows.iter().map(|r| (r.mode, r.depth)).collect();
    assert_eq!(
        keys,
        vec![
            (Mode::Single, 5),
            (Mode::Collab, 5),
            (Mode::Single, 5),
            (Mode::Collab, 5),
            (Mode::Single, 7),
            (Mode::Collab, 7),
            (Mode::Single, 7),
            (Mode::Collab, 7)
        ]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Victim sets grow with the fraction for a fixed seed, so recovery can
    /// only fall.
    #[test]
    fn recovery_never_rises_with_more_failures(seed in any::<u64>(), r in 1usize..8) {
        let cfg = BenchConfig { leaves: 60, repetitions: 1, seed, ..BenchConfig::default() };
        let fractions = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let rows: Vec<SweepRow> = run_recovery_sweep(&cfg, &[Strategy::Replication(r), Strategy::Entangled], &fractions).unwrap();
        for w in rows.windows(2).filter(|w| w[0].strategy == w[1].strategy) {
            prop_assert!(w[1].pct_blocks_recovered <= w[0].pct_blocks_recovered, "{:?}", w);
            prop_assert!((0.0..=100.0).contains(&w[1].pct_blocks_recovered));
        }
    }
}
