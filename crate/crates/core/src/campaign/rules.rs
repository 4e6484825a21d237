use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::net::{Address128, Prefix};

pub const ROUND_MASKS: [u8; 4] = [56, 60, 62, 64];

/// Targets needed at `mask` for one /48.
pub fn probes_for_mask(mask: u8) -> u64 {
    1 << (mask - 48)
}

/// Total probes a /48 consumes when it stops after `rounds` rounds.
pub fn probes_through(rounds: usize) -> u64 {
    ROUND_MASKS[..rounds].iter().map(|&m| probes_for_mask(m)).sum()
}

pub fn round_index(mask: u8) -> Result<usize, CampaignError> {
    ROUND_MASKS
        .iter()
        .position(|&m| m == mask)
        .ok_or_else(|| CampaignError::Argument(format!("mask /{mask} is not one of 56, 60, 62, 64")))
}

/// `prefix.base + (i << (128 - mask)) + t` for every subnet `i` of the /48.
pub fn generate_round_targets(prefix: Prefix, mask: u8, t: u64) -> Result<Vec<Address128>, CampaignError> {
    round_index(mask)?;
    if prefix.len() != 48 {
        return Err(CampaignError::Argument(format!("{prefix} is not a /48")));
    }
    let shift = 128 - mask as u32;
    let base = prefix.base().0;
    Ok((0..probes_for_mask(mask) as u128)
        .map(|i| Address128(base + (i << shift) + t as u128))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Advance,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub eta1: usize,
    pub eta2: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { eta1: 16, eta2: 256 }
    }
}

/// Number of distinct last hops per /60 required at mask 62.
pub const ETA3: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Seen {
    first_target: Address128,
    multi: bool,
}

/// Campaign-wide last hop → target multiplicity, for the prefix-unique test.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LastHopIndex {
    seen: HashMap<Address128, Seen>,
}

impl LastHopIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, lasthop: Address128, target: Address128) {
        self.seen
            .entry(lasthop)
            .and_modify(|s| s.multi |= s.first_target != target)
            .or_insert(Seen {
                first_target: target,
                multi: false,
            });
    }

    /// Seen for exactly one distinct target so far.
    pub fn is_prefix_unique(&self, lasthop: Address128) -> bool {
        self.seen.get(&lasthop).is_some_and(|s| !s.multi)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Round decision for one /48 from its filtered target → last hop map.
pub fn evaluate_round(
    prefix: Prefix,
    mask: u8,
    filtered: &BTreeMap<Address128, Address128>,
    index: &LastHopIndex,
    eta: Thresholds,
) -> Result<Decision, CampaignError> {
    let unique = || filtered.values().collect::<BTreeSet<_>>().len();
    let advance = match round_index(mask)? {
        0 => unique() > eta.eta1,
        1 => unique() > eta.eta2,
        2 => {
            let mut per60: BTreeMap<u128, Vec<Address128>> = BTreeMap::new();
            for (target, lh) in filtered {
                if prefix.contains(*target) {
                    per60.entry((target.0 - prefix.base().0) >> 68).or_default().push(*lh);
                }
            }
            per60.values().any(|hops| {
                let distinct: BTreeSet<_> = hops.iter().collect();
                hops.len() == ETA3
                    && distinct.len() == ETA3
                    && hops.iter().all(|h| index.is_prefix_unique(*h))
            })
        }
        _ => false,
    };
    Ok(if advance { Decision::Advance } else { Decision::Stop })
}
