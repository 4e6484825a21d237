//! Seed traces and candidate /48 selection.
//!
//! A candidate /48 is one that contains the destinations of some last hop
//! that was never reached from any other /48.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{parse_address, prefix48, Address128, Prefix};

/// A traced destination with hops indexed by TTL starting at 1.
/// `None` marks an anonymous hop.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Trace {
    pub dst: Address128,
    pub hops: Vec<Option<Address128>>,
    /// Per-hop receive times in milliseconds; empty when unknown.
    pub recv_ms: Vec<Option<u64>>,
}

pub type SeedTrace = Trace;
pub type TraceResult = Trace;

impl Trace {
    pub fn new(dst: Address128, hops: Vec<Option<Address128>>) -> Trace {
        Trace {
            dst,
            hops,
            recv_ms: Vec::new(),
        }
    }

    pub fn anonymous(dst: Address128) -> Trace {
        Trace::new(dst, Vec::new())
    }

    /// Index (0-based) of the highest-TTL responsive hop.
    pub fn last_responsive_index(&self) -> Option<usize> {
        self.hops.iter().rposition(Option::is_some)
    }

    pub fn last_responsive_hop(&self) -> Option<Address128> {
        self.last_responsive_index().and_then(|i| self.hops[i])
    }

    /// The hop one TTL before the last responsive hop, if it answered.
    pub fn penultimate_hop(&self) -> Option<Address128> {
        let i = self.last_responsive_index()?;
        i.checked_sub(1).and_then(|j| self.hops[j])
    }

    pub fn recv_ms_at(&self, idx: usize) -> Option<u64> {
        self.recv_ms.get(idx).copied().flatten()
    }

    pub fn is_anonymous(&self) -> bool {
        self.last_responsive_index().is_none()
    }
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    dst: String,
    #[serde(default)]
    hops: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    recv_ms: Vec<Option<u64>>,
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: field {field}: {message}")]
    Address {
        line: usize,
        field: String,
        message: String,
    },
    #[error("reading traces: {0}")]
    Io(#[from] std::io::Error),
}

impl SeedError {
    pub fn line(&self) -> Option<usize> {
        match self {
            SeedError::Json { line, .. } | SeedError::Address { line, .. } => Some(*line),
            SeedError::Io(_) => None,
        }
    }
}

/// Parses one JSON Lines record; unknown fields are ignored.
pub fn parse_trace_line(text: &str, line: usize) -> Result<Trace, SeedError> {
    let raw: TraceLine =
        serde_json::from_str(text).map_err(|source| SeedError::Json { line, source })?;
    let addr_err = |field: String, e: crate::net::AddrParseError| SeedError::Address {
        line,
        field,
        message: e.to_string(),
    };
    let dst = parse_address(&raw.dst).map_err(|e| addr_err("dst".into(), e))?;
    let hops = raw
        .hops
        .iter()
        .enumerate()
        .map(|(i, h)| match h {
            None => Ok(None),
            Some(s) => parse_address(s)
                .map(Some)
                .map_err(|e| addr_err(format!("hops[{i}]"), e)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trace {
        dst,
        hops,
        recv_ms: raw.recv_ms,
    })
}

/// Reads a JSON Lines trace file. Blank lines are skipped.
pub fn parse_seed_file<R: BufRead>(reader: R) -> Result<Vec<SeedTrace>, SeedError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_trace_line(&line, idx + 1)?);
    }
    Ok(out)
}

pub fn trace_to_json(t: &Trace) -> String {
    let line = TraceLine {
        dst: t.dst.to_string(),
        hops: t.hops.iter().map(|h| h.map(|a| a.to_string())).collect(),
        recv_ms: t.recv_ms.clone(),
    };
    serde_json::to_string(&line).expect("trace serializes")
}

pub fn write_traces<W: Write>(mut w: W, traces: &[Trace]) -> std::io::Result<()> {
    for t in traces {
        writeln!(w, "{}", trace_to_json(t))?;
    }
    Ok(())
}

/// Candidate /48s together with the unique last hops that nominated them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub provenance: BTreeMap<Prefix, BTreeSet<Address128>>,
}

impl CandidateSet {
    pub fn from_prefixes<I: IntoIterator<Item = Prefix>>(prefixes: I) -> CandidateSet {
        CandidateSet {
            provenance: prefixes.into_iter().map(|p| (p, BTreeSet::new())).collect(),
        }
    }

    pub fn prefixes(&self) -> impl Iterator<Item = &Prefix> {
        self.provenance.keys()
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn contains(&self, p: &Prefix) -> bool {
        self.provenance.contains_key(p)
    }
}

/// Groups destination /48s by last responsive hop and keeps each /48 that
/// is the only one reached through some last hop. Traces without any
/// responsive hop are skipped; loops are not repaired.
pub fn discover_init(traces: &[SeedTrace]) -> CandidateSet {
    enum Density {
        One(Prefix),
        Many,
    }
    let mut density: HashMap<Address128, Density> = HashMap::new();
    for t in traces {
        let Some(lh) = t.last_responsive_hop() else {
            continue;
        };
        let dst48 = prefix48(t.dst);
        density
            .entry(lh)
            .and_modify(|d| {
                if let Density::One(p) = d {
                    if *p != dst48 {
                        *d = Density::Many;
                    }
                }
            })
            .or_insert(Density::One(dst48));
    }
    let mut out = CandidateSet::default();
    for (lh, d) in density {
        if let Density::One(p) = d {
            out.provenance.entry(p).or_default().insert(lh);
        }
    }
    out
}

/// Reads a candidate list: one prefix per line, `#` comments allowed.
pub fn read_candidates<R: BufRead>(reader: R) -> Result<CandidateSet, SeedError> {
    let mut set = CandidateSet::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let prefix: Prefix = text.parse().map_err(|e: crate::net::PrefixError| SeedError::Address {
            line: idx + 1,
            field: "prefix".into(),
            message: e.to_string(),
        })?;
        set.provenance.entry(prefix).or_default();
    }
    Ok(set)
}
