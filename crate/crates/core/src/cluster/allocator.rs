//! Peer selection for new pins.
//!
//! Candidates are peers with a fresh freespace metric large enough for the
//! block. They are split by each partitionable tag metric in turn (name
//! order) and drawn round-robin across the partitions, so replicas spread
//! over regions before doubling up. Partitions that already hold a replica
//! go last; ties fall to the partition with the most free space.

use std::collections::BTreeMap;

use super::metrics::{MetricBoard, MetricKind, MetricValue};
use super::PeerId;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: PeerId,
    pub freespace: u64,
    pub tags: BTreeMap<String, String>,
}

/// Candidates usable at tick `now`; `pending` is subtracted from freespace.
pub fn candidates(board: &MetricBoard, now: u64, peers: &[PeerId], pending: &dyn Fn(&PeerId) -> u64, need_bytes: u64) -> Vec<Candidate> {
    peers
        .iter()
        .filter_map(|id| {
            let free = board.valid(id, &MetricKind::Freespace, now)?.int()?.saturating_sub(pending(id));
            if free < need_bytes {
                return None;
            }
            let tags = board
                .valid_metrics(id, now)
                .filter(|m| m.partitionable)
                .filter_map(|m| match (&m.kind, &m.value) {
                    (MetricKind::Tag(name), MetricValue::Text(v)) => Some((name.clone(), v.clone())),
                    _ => None,
                })
                .collect();
            Some(Candidate { id: *id, freespace: free, tags })
        })
        .collect()
}

/// Pick allocations: overrides verbatim, else existing candidates first and
/// then the partitioned ordering, up to `rf_max`.
pub fn allocate(cands: &[Candidate], existing: &[PeerId], rf_min: usize, rf_max: usize, overrides: Option<&[PeerId]>) -> Result<Vec<PeerId>> {
    if let Some(o) = overrides {
        return Ok(o.to_vec());
    }
    let mut chosen: Vec<PeerId> = existing.iter().filter(|p| cands.iter().any(|c| c.id == **p)).copied().collect();
    chosen.dedup();
    chosen.truncate(rf_max);
    let kept: Vec<&Candidate> = chosen.iter().filter_map(|p| cands.iter().find(|c| c.id == *p)).collect();
    let rest: Vec<&Candidate> = cands.iter().filter(|c| !chosen.contains(&c.id)).collect();
    let mut names: Vec<&String> = cands.iter().flat_map(|c| c.tags.keys()).collect();
    names.sort();
    names.dedup();
    for c in order(rest, &kept, &names) {
        if chosen.len() >= rf_max {
            break;
        }
        chosen.push(c.id);
    }
    if chosen.len() < rf_min {
        return Err(Error::InsufficientPeers { needed: rf_min, available: chosen.len() });
    }
    Ok(chosen)
}

fn order<'a>(mut cands: Vec<&'a Candidate>, kept: &[&Candidate], names: &[&String]) -> Vec<&'a Candidate> {
    let Some((name, deeper)) = names.split_first() else {
        cands.sort_by(|a, b| b.freespace.cmp(&a.freespace).then(a.id.cmp(&b.id)));
        return cands;
    };
    let mut groups: BTreeMap<Option<&String>, Vec<&Candidate>> = BTreeMap::new();
    for c in cands {
        groups.entry(c.tags.get(*name)).or_default().push(c);
    }
    let mut groups: Vec<(usize, u64, Option<&String>, Vec<&Candidate>)> = groups
        .into_iter()
        .map(|(key, members)| {
            let already = kept.iter().filter(|k| k.tags.get(*name) == key).count();
            let best = members.iter().map(|c| c.freespace).max().unwrap_or(0);
            let sub_kept: Vec<&Candidate> = kept.iter().filter(|k| k.tags.get(*name) == key).copied().collect();
            (already, best, key, order(members, &sub_kept, deeper))
        })
        .collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let longest = groups.iter().map(|g| g.3.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for round in 0..longest {
        for g in &groups {
            if let Some(c) = g.3.get(round) {
                out.push(*c);
            }
        }
    }
    out
}
