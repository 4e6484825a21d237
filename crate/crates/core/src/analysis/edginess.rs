use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::campaign::LastHopRecord;
use crate::net::{matching_msb, prefix48, Address128, AsnTable};
use crate::seed::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdginessOptions {
    /// A last hop answering for more than this many targets inside
    /// `window_ms` is flagged.
    pub suspect_targets: usize,
    pub window_ms: u64,
}

impl Default for EdginessOptions {
    fn default() -> Self {
        EdginessOptions {
            suspect_targets: 256,
            window_ms: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suspect {
    pub lasthop: Address128,
    /// Most targets seen inside one window.
    pub peak_targets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdginessReport {
    pub scored: u64,
    /// `None` when no AS table was supplied.
    pub same_as_fraction: Option<f64>,
    /// Index k counts pairs whose target and last hop share k leading bits.
    pub msb_histogram: Vec<u64>,
    pub msb_median: Option<u32>,
    pub periphery_only_fraction: f64,
    pub unique_lasthops: u64,
    pub unique_final_edges: u64,
    pub suspects: Vec<Suspect>,
}

/// Turns full traces into last-hop records (round 0, clock from `recv_ms`
/// when present).
pub fn records_from_traces(traces: &[Trace]) -> Vec<LastHopRecord> {
    traces
        .iter()
        .filter_map(|t| {
            let idx = t.last_responsive_index()?;
            Some(LastHopRecord {
                target: t.dst,
                target_prefix: prefix48(t.dst),
                round: 0,
                lasthop: t.hops[idx]?,
                penultimate: t.penultimate_hop(),
                hop_count: idx as u32 + 1,
                recv_ms: t.recv_ms_at(idx).unwrap_or(0),
            })
        })
        .collect()
}

/// Median of a histogram: the lower middle element for even totals.
pub fn histogram_median(hist: &[u64]) -> Option<u32> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let want = (total - 1) / 2;
    let mut seen = 0;
    for (k, c) in hist.iter().enumerate() {
        seen += c;
        if seen > want {
            return Some(k as u32);
        }
    }
    None
}

fn suspects(records: &[LastHopRecord], opts: EdginessOptions) -> Vec<Suspect> {
    let mut by_hop: BTreeMap<Address128, Vec<u64>> = BTreeMap::new();
    for r in records {
        by_hop.entry(r.lasthop).or_default().push(r.recv_ms);
    }
    let mut out = Vec::new();
    for (lasthop, mut times) in by_hop {
        if times.len() <= opts.suspect_targets {
            continue;
        }
        times.sort_unstable();
        let mut lo = 0;
        let mut peak = 0;
        for hi in 0..times.len() {
            while times[hi] - times[lo] >= opts.window_ms {
                lo += 1;
            }
            peak = peak.max(hi - lo + 1);
        }
        if peak > opts.suspect_targets {
            out.push(Suspect {
                lasthop,
                peak_targets: peak,
            });
        }
    }
    out
}

/// Scores every record. `traces` supplies full hop lists for the
/// periphery-only test; record penultimates count as intermediate hops too.
pub fn edginess(records: &[LastHopRecord], traces: &[Trace], asn: &AsnTable, opts: EdginessOptions) -> EdginessReport {
    let mut hist = vec![0u64; 129];
    let mut same_as = 0u64;
    for r in records {
        hist[matching_msb(r.target, r.lasthop) as usize] += 1;
        if let (Some(x), Some(y)) = (asn.lookup(r.target), asn.lookup(r.lasthop)) {
            if x == y {
                same_as += 1;
            }
        }
    }
    let scored = records.len() as u64;
    let same_as_fraction = if asn.is_empty() {
        None
    } else if scored == 0 {
        Some(0.0)
    } else {
        Some(same_as as f64 / scored as f64)
    };

    let mut intermediate: HashSet<Address128> = records.iter().filter_map(|r| r.penultimate).collect();
    for t in traces {
        if let Some(last) = t.last_responsive_index() {
            intermediate.extend(t.hops[..last].iter().flatten());
        }
    }
    let lasthops: BTreeSet<Address128> = records.iter().map(|r| r.lasthop).collect();
    let periphery_only = lasthops.iter().filter(|a| !intermediate.contains(a)).count();
    let edges: BTreeSet<(Address128, Address128)> = records
        .iter()
        .filter_map(|r| r.penultimate.map(|p| (p, r.lasthop)))
        .collect();

    EdginessReport {
        scored,
        same_as_fraction,
        msb_median: histogram_median(&hist),
        msb_histogram: hist,
        periphery_only_fraction: if lasthops.is_empty() {
            0.0
        } else {
            periphery_only as f64 / lasthops.len() as f64
        },
        unique_lasthops: lasthops.len() as u64,
        unique_final_edges: edges.len() as u64,
        suspects: suspects(records, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Prefix;
    use proptest::prelude::*;

    fn a(s: &str) -> Address128 {
        s.parse().unwrap()
    }

    fn rec(target: &str, lasthop: &str, pen: Option<&str>) -> LastHopRecord {
        LastHopRecord {
            target: a(target),
            target_prefix: prefix48(a(target)),
            round: 56,
            lasthop: a(lasthop),
            penultimate: pen.map(a),
            hop_count: 5,
            recv_ms: 0,
        }
    }

    #[test]
    fn single_trace_same_as_and_msb() {
        let table = AsnTable::from_entries([("2a03:4980::/32".parse::<Prefix>().unwrap(), 202053)]);
        let r = rec("2a03:4980:2b6:9624:8643:b70f:adae:4f40", "2a03:4980::b:0:5", Some("2a03:4980::6:0:2"));
        let rep = edginess(&[r], &[], &table, EdginessOptions::default());
        assert_eq!(rep.same_as_fraction, Some(1.0));
        assert_eq!(rep.msb_histogram[38], 1);
        assert_eq!(rep.msb_median, Some(38));
        assert_eq!(rep.unique_final_edges, 1);
        let rep = edginess(&[], &[], &AsnTable::new(), EdginessOptions::default());
        assert_eq!(rep.same_as_fraction, None);
        assert_eq!(rep.msb_histogram.len(), 129);
        assert_eq!(rep.msb_median, None);
    }

    #[test]
    fn hop_seen_mid_path_is_not_periphery_only() {
        let records = [rec("2001:db8:1::1", "2001:db8:ff::1", None), rec("2001:db8:2::1", "2001:db8:ff::2", None)];
        let other = Trace::new(
            a("2001:db8:9::1"),
            vec![None, Some(a("2001:db8::1")), None, None, Some(a("2001:db8:ff::1")), Some(a("2001:db8:9::99"))],
        );
        let rep = edginess(&records, &[other], &AsnTable::new(), EdginessOptions::default());
        assert_eq!(rep.unique_lasthops, 2);
        assert_eq!(rep.periphery_only_fraction, 0.5);
    }

    #[test]
    fn median_examples() {
        assert_eq!(histogram_median(&[0, 2, 0, 1]), Some(1));
        assert_eq!(histogram_median(&[1, 0, 0, 1]), Some(0));
        assert_eq!(histogram_median(&[0, 0, 3]), Some(2));
    }

    #[test]
    fn busy_hop_is_flagged() {
        let mut records = Vec::new();
        for i in 0..300u32 {
            let mut r = rec("2001:db8:1::1", "2001:db8:ff::1", None);
            r.target = Address128(r.target.0 + i as u128);
            r.recv_ms = i as u64;
            records.push(r);
        }
        let rep = edginess(&records, &[], &AsnTable::new(), EdginessOptions::default());
        assert_eq!(rep.suspects, vec![Suspect { lasthop: a("2001:db8:ff::1"), peak_targets: 300 }]);
        let spread = EdginessOptions { suspect_targets: 256, window_ms: 10 };
        assert!(edginess(&records, &[], &AsnTable::new(), spread).suspects.is_empty());
    }

    #[test]
    fn traces_convert_to_records() {
        let t = Trace::new(a("2001:db8:1::1"), vec![Some(a("2001:db8::1")), None, Some(a("2001:db8:1::ff"))]);
        let r = records_from_traces(&[t, Trace::anonymous(a("::1"))]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].hop_count, 3);
        assert_eq!(r[0].penultimate, None);
    }

    proptest! {
        #[test]
        fn histogram_mass_and_fraction_bounds(pairs in proptest::collection::vec((any::<u128>(), any::<u128>(), any::<bool>()), 0..100)) {
            let records: Vec<LastHopRecord> = pairs.iter().map(|(t, l, pen)| LastHopRecord {
                target: Address128(*t),
                target_prefix: prefix48(Address128(*t)),
                round: 56,
                lasthop: Address128(*l),
                penultimate: pen.then_some(Address128(*l ^ 1)),
                hop_count: 3,
                recv_ms: 0,
            }).collect();
            let table = AsnTable::from_entries([("::/1".parse::<Prefix>().unwrap(), 1)]);
            let rep = edginess(&records, &[], &table, EdginessOptions::default());
            prop_assert_eq!(rep.msb_histogram.iter().sum::<u64>(), records.len() as u64);
            prop_assert!((0.0..=1.0).contains(&rep.periphery_only_fraction));
            prop_assert!((0.0..=1.0).contains(&rep.same_as_fraction.unwrap()));
            prop_assert!(rep.unique_final_edges <= rep.scored);
        }
    }
}
