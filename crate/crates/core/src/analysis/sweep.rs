use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::campaign::LastHopRecord;
use crate::net::{Address128, Prefix};

pub type LastHopsByPrefix = BTreeMap<Prefix, BTreeSet<Address128>>;

pub const DEFAULT_ETAS: [usize; 6] = [4, 8, 16, 32, 64, 128];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSweepRow {
    pub eta: usize,
    pub selected_prefixes: u64,
    /// Distinct round-2 last hops over the selection; the union of the
    /// selection's round-1 last hops when `projected`.
    pub unique_lasthops: u64,
    pub probes: u64,
    pub probes_per_lasthop: Option<f64>,
    pub projected: bool,
}

/// Groups records of one round (by mask) per target /48.
pub fn lasthops_by_prefix(records: &[LastHopRecord], mask: u8) -> LastHopsByPrefix {
    let mut out = LastHopsByPrefix::new();
    for r in records.iter().filter(|r| r.round == mask) {
        out.entry(r.target_prefix).or_default().insert(r.lasthop);
    }
    out
}

/// For each η, selects the /48s with more than η distinct round-1 last
/// hops and prices a round 2 over them.
pub fn eta_sweep(
    round1: &LastHopsByPrefix,
    round2: Option<&LastHopsByPrefix>,
    etas: &[usize],
    probes_per_prefix_next_round: u64,
) -> Vec<EtaSweepRow> {
    etas.iter()
        .map(|&eta| {
            let selected: Vec<&Prefix> = round1.iter().filter(|(_, s)| s.len() > eta).map(|(p, _)| p).collect();
            let source = round2.unwrap_or(round1);
            let unique: BTreeSet<&Address128> = selected.iter().filter_map(|p| source.get(*p)).flatten().collect();
            let probes = selected.len() as u64 * probes_per_prefix_next_round;
            EtaSweepRow {
                eta,
                selected_prefixes: selected.len() as u64,
                unique_lasthops: unique.len() as u64,
                probes,
                probes_per_lasthop: (!unique.is_empty()).then(|| probes as f64 / unique.len() as f64),
                projected: round2.is_none(),
            }
        })
        .collect()
}
