//! Metrics over last-hop records: EUI-64 and MAC reuse, IID entropy,
//! edginess, final edges, threshold sweeps and subnet-boundary detection.

mod detect;
mod edginess;
mod entropy;
mod eui64;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::campaign::LastHopRecord;
use crate::net::{Address128, AsnTable};
use crate::seed::Trace;

pub use detect::{detect_boundary, DetectError, Detection, DEFAULT_MAX_MASK};
pub use edginess::{edginess, histogram_median, records_from_traces, EdginessOptions, EdginessReport, Suspect};
pub use entropy::{entropy_distribution, iid_entropy};
pub use eui64::{eui64_stats, Eui64Stats, MacMode};
pub use sweep::{eta_sweep, lasthops_by_prefix, EtaSweepRow, LastHopsByPrefix, DEFAULT_ETAS};

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub records: u64,
    pub mac_mode: MacMode,
    pub edginess: EdginessReport,
    pub eui64: Eui64Stats,
    pub entropy: BTreeMap<String, u64>,
    pub sweep: Vec<EtaSweepRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub mac_mode: MacMode,
    pub edginess: EdginessOptions,
    /// Restrict record-based metrics to one round (mask).
    pub round: Option<u8>,
    pub etas: Vec<usize>,
}

/// Runs every record-level metric. The η sweep uses the mask-56 and
/// mask-60 records when present.
pub fn analyze(records: &[LastHopRecord], traces: &[Trace], asn: &AsnTable, opts: &AnalysisOptions) -> AnalysisReport {
    let scoped: Vec<LastHopRecord> = match opts.round {
        Some(m) => records.iter().filter(|r| r.round == m).cloned().collect(),
        None => records.to_vec(),
    };
    let distinct: BTreeSet<Address128> = scoped.iter().map(|r| r.lasthop).collect();
    let r1 = lasthops_by_prefix(records, 56);
    let r2 = lasthops_by_prefix(records, 60);
    let etas = if opts.etas.is_empty() { DEFAULT_ETAS.to_vec() } else { opts.etas.clone() };
    let sweep = if r1.is_empty() {
        Vec::new()
    } else {
        eta_sweep(&r1, (!r2.is_empty()).then_some(&r2), &etas, 1 << 12)
    };
    AnalysisReport {
        records: scoped.len() as u64,
        mac_mode: opts.mac_mode,
        edginess: edginess(&scoped, traces, asn, opts.edginess),
        eui64: eui64_stats(distinct.iter().copied(), opts.mac_mode),
        entropy: entropy_distribution(distinct.iter().copied()),
        sweep,
    }
}

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct ReportError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

#[derive(Serialize)]
struct Summary<'a> {
    records: u64,
    scored_pairs: u64,
    unique_lasthops: u64,
    unique_final_edges: u64,
    same_as_fraction: Option<f64>,
    msb_median: Option<u32>,
    periphery_only_fraction: f64,
    eui64_lasthops: u64,
    distinct_macs: u64,
    mac_mode: MacMode,
    infrastructure_suspects: &'a [Suspect],
}

pub fn summary_json(report: &AnalysisReport) -> String {
    let e = &report.edginess;
    let s = Summary {
        records: report.records,
        scored_pairs: e.scored,
        unique_lasthops: e.unique_lasthops,
        unique_final_edges: e.unique_final_edges,
        same_as_fraction: e.same_as_fraction,
        msb_median: e.msb_median,
        periphery_only_fraction: e.periphery_only_fraction,
        eui64_lasthops: report.eui64.eui64_count,
        distinct_macs: report.eui64.macs.len() as u64,
        mac_mode: report.mac_mode,
        infrastructure_suspects: &e.suspects,
    };
    serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV bodies keyed by file name, plus `summary.json`.
pub fn report_files(report: &AnalysisReport) -> Vec<(&'static str, String)> {
    let mut msb = String::from("msb,count\n");
    for (k, c) in report.edginess.msb_histogram.iter().enumerate() {
        writeln!(msb, "{k},{c}").unwrap();
    }
    let mut mac = String::from("mac,addresses\n");
    for (m, c) in report.eui64.histogram_rows() {
        writeln!(mac, "{m},{c}").unwrap();
    }
    let mut ent = String::from("entropy,count\n");
    for (e, c) in &report.entropy {
        writeln!(ent, "{e},{c}").unwrap();
    }
    let mut sweep = String::from("eta,selected_prefixes,unique_lasthops,probes,probes_per_lasthop,projected\n");
    for r in &report.sweep {
        writeln!(
            sweep,
            "{},{},{},{},{},{}",
            r.eta,
            r.selected_prefixes,
            r.unique_lasthops,
            r.probes,
            opt_f64(r.probes_per_lasthop),
            r.projected
        )
        .unwrap();
    }
    vec![
        ("msb_histogram.csv", msb),
        ("mac_histogram.csv", mac),
        ("entropy_distribution.csv", ent),
        ("eta_sweep.csv", sweep),
        ("summary.json", summary_json(report)),
    ]
}

/// Writes the report files into `dir`, returning their paths.
pub fn emit_report(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (name, body) in report_files(report) {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| ReportError {
            path: path.clone(),
            source,
        })?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::prefix48;

    #[test]
    fn empty_corpus_gives_headers_and_zeros() {
        let rep = analyze(&[], &[], &AsnTable::new(), &AnalysisOptions::default());
        let files = report_files(&rep);
        let get = |n: &str| files.iter().find(|(k, _)| *k == n).unwrap().1.clone();
        assert_eq!(get("mac_histogram.csv"), "mac,addresses\n");
        assert_eq!(get("entropy_distribution.csv"), "entropy,count\n");
        assert_eq!(get("eta_sweep.csv").lines().count(), 1);
        assert_eq!(get("msb_histogram.csv").lines().count(), 130);
        let summary: serde_json::Value = serde_json::from_str(&get("summary.json")).unwrap();
        assert_eq!(summary["records"], 0);
        assert_eq!(summary["unique_lasthops"], 0);
        assert!(summary["same_as_fraction"].is_null());
    }

    #[test]
    fn emitted_bytes_are_stable() {
        let records: Vec<LastHopRecord> = (0..50u128)
            .map(|i| {
                let target = Address128(0x2600_8805_9200u128 << 80 | i << 72 | 9);
                LastHopRecord {
                    target,
                    target_prefix: prefix48(target),
                    round: 56,
                    lasthop: Address128(target.0 & !0xffff_ffff_ffff_ffff | 0x0200_00ff_fe00_0000 | (i % 7) as u128),
                    penultimate: Some(Address128(0x2001_0db8u128 << 96 | 1)),
                    hop_count: 5,
                    recv_ms: i as u64,
                }
            })
            .collect();
        let rep = analyze(&records, &[], &AsnTable::new(), &AnalysisOptions::default());
        assert_eq!(rep.eui64.macs.len(), 7);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(&rep, d1.path()).unwrap();
        emit_report(&analyze(&records, &[], &AsnTable::new(), &AnalysisOptions::default()), d2.path()).unwrap();
        for (name, _) in report_files(&rep) {
            assert_eq!(fs::read(d1.path().join(name)).unwrap(), fs::read(d2.path().join(name)).unwrap());
        }
    }
}
