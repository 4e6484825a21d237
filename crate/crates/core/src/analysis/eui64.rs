use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::net::{eui64_embedded_bytes, eui64_to_mac, Address128, MacAddress};

/// Whether recovered MACs have the universal/local bit restored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacMode {
    #[default]
    Normalized,
    Raw,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eui64Stats {
    pub distinct_lasthops: u64,
    pub eui64_count: u64,
    /// MAC → distinct EUI-64 last-hop addresses carrying it.
    pub macs: BTreeMap<MacAddress, u64>,
}

impl Eui64Stats {
    pub fn distinct_macs(&self) -> usize {
        self.macs.len()
    }

    /// Rows sorted by descending count, then MAC.
    pub fn histogram_rows(&self) -> Vec<(MacAddress, u64)> {
        let mut rows: Vec<_> = self.macs.iter().map(|(m, c)| (*m, *c)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows
    }
}

/// Deduplicates the addresses, then tallies EUI-64 IIDs by embedded MAC.
pub fn eui64_stats<I: IntoIterator<Item = Address128>>(lasthops: I, mode: MacMode) -> Eui64Stats {
    let distinct: BTreeSet<Address128> = lasthops.into_iter().collect();
    let mut stats = Eui64Stats {
        distinct_lasthops: distinct.len() as u64,
        ..Default::default()
    };
    for a in distinct {
        let mac = match mode {
            MacMode::Normalized => eui64_to_mac(a.iid()),
            MacMode::Raw => eui64_embedded_bytes(a.iid()).map(MacAddress),
        };
        if let Some(m) = mac {
            stats.eui64_count += 1;
            *stats.macs.entry(m).or_insert(0) += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(s: &str) -> Address128 {
        s.parse().unwrap()
    }

    #[test]
    fn shared_mac_under_three_prefixes() {
        let hops = [
            a("2001:db8:1::5a02:3ff:fe04:506"),
            a("2001:db8:2::5a02:3ff:fe04:506"),
            a("2001:db8:3::5a02:3ff:fe04:506"),
            a("2001:db8:3::5a02:3ff:fe04:506"),
            a("2001:db8:4::1"),
        ];
        let s = eui64_stats(hops, MacMode::Normalized);
        assert_eq!(s.distinct_lasthops, 4);
        assert_eq!(s.eui64_count, 3);
        let mac: MacAddress = "58:02:03:04:05:06".parse().unwrap();
        assert_eq!(s.macs.get(&mac), Some(&3));
        let raw = eui64_stats(hops, MacMode::Raw);
        assert_eq!(raw.macs.keys().next().unwrap().to_string(), "5a:02:03:04:05:06");
    }

    #[test]
    fn empty_and_non_eui64() {
        assert_eq!(eui64_stats([], MacMode::Normalized), Eui64Stats::default());
        let s = eui64_stats([a("2001:db8::1")], MacMode::Normalized);
        assert_eq!((s.eui64_count, s.macs.len()), (0, 0));
    }

    proptest! {
        #[test]
        fn counts_are_consistent(iids in proptest::collection::vec(any::<u64>(), 0..200), forced in proptest::collection::vec(any::<u32>(), 0..50)) {
            let mut hops: Vec<Address128> = iids.iter().map(|v| Address128(0x2001u128 << 112 | *v as u128)).collect();
            // make some of them EUI-64 with a small MAC space
            for (i, f) in forced.iter().enumerate() {
                let iid = 0x0200_00ff_fe00_0000u64 | (*f as u64 & 0x3);
                hops.push(Address128((0x2001u128 << 112) | ((i as u128) << 64) | iid as u128));
            }
            let s = eui64_stats(hops.iter().copied(), MacMode::Normalized);
            prop_assert_eq!(s.macs.values().sum::<u64>(), s.eui64_count);
            prop_assert!(s.eui64_count >= s.macs.len() as u64);
            let manual = hops.iter().collect::<BTreeSet<_>>().into_iter().filter(|h| {
                let b = h.iid().0.to_be_bytes();
                b[3] == 0xff && b[4] == 0xfe
            }).count() as u64;
            prop_assert_eq!(s.eui64_count, manual);
        }
    }
}
