//! Response filtering applied before any last hop is counted.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{matching_msb, Address128, AsnTable, Prefix, PrefixMap};

/// Curated aliased prefixes; containment is the union of all members.
#[derive(Clone, Debug, Default)]
pub struct AliasSet {
    prefixes: PrefixMap<()>,
}

#[derive(Debug, Error)]
pub enum AliasFileError {
    #[error("alias file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("reading alias file: {0}")]
    Io(#[from] std::io::Error),
}

impl AliasSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_prefixes<I: IntoIterator<Item = Prefix>>(prefixes: I) -> AliasSet {
        let mut set = AliasSet::new();
        for p in prefixes {
            set.insert(p);
        }
        set
    }

    pub fn insert(&mut self, p: Prefix) {
        self.prefixes.insert(p, ());
    }

    pub fn is_alias(&self, a: Address128) -> bool {
        self.prefixes.contains(a)
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// One `prefix/len` per line; `#` starts a comment.
    pub fn load<R: BufRead>(reader: R) -> Result<AliasSet, AliasFileError> {
        let mut set = AliasSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.split('#').next().unwrap_or_default().trim();
            if text.is_empty() {
                continue;
            }
            let p: Prefix = text.parse().map_err(|e: crate::net::PrefixError| AliasFileError::Syntax {
                line: idx + 1,
                message: e.to_string(),
            })?;
            set.insert(p);
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Ok,
    SelfResponse,
    Alias,
    LinkLocal,
    SiteLocal,
    V4InV6,
    Unroutable,
    SpoofSuspect,
}

impl Reason {
    pub const ALL: [Reason; 8] = [
        Reason::Ok,
        Reason::SelfResponse,
        Reason::Alias,
        Reason::LinkLocal,
        Reason::SiteLocal,
        Reason::V4InV6,
        Reason::Unroutable,
        Reason::SpoofSuspect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "ok",
            Reason::SelfResponse => "self_response",
            Reason::Alias => "alias",
            Reason::LinkLocal => "link_local",
            Reason::SiteLocal => "site_local",
            Reason::V4InV6 => "v4_in_v6",
            Reason::Unroutable => "unroutable",
            Reason::SpoofSuspect => "spoof_suspect",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResponseVerdict {
    pub reason: Reason,
}

impl ResponseVerdict {
    pub fn kept(&self) -> bool {
        self.reason == Reason::Ok
    }
}

/// The rest of the trace, used only by the spoof heuristic.
#[derive(Clone, Copy, Debug, Default)]
pub struct TraceContext<'a> {
    pub hops: &'a [Option<Address128>],
}

const LINK_LOCAL: u128 = 0xfe80 << 112;
const SITE_LOCAL: u128 = 0xfec0 << 112;
const TEN_BIT_MASK: u128 = 0xffc0 << 112;
const V4_MAPPED: u128 = 0xffff << 32;
const LOW_96_MASK: u128 = u128::MAX << 32;

pub fn is_link_local(a: Address128) -> bool {
    a.0 & TEN_BIT_MASK == LINK_LOCAL
}

pub fn is_site_local(a: Address128) -> bool {
    a.0 & TEN_BIT_MASK == SITE_LOCAL
}

/// `::ffff:0:0/96` (mapped) or `::/96` (compatible).
pub fn is_v4_embedded(a: Address128) -> bool {
    let top = a.0 & LOW_96_MASK;
    top == V4_MAPPED || top == 0
}

const SPOOF_MSB: u32 = 16;

/// Immutable filtering policy.
#[derive(Clone, Debug, Default)]
pub struct ResponseFilter {
    pub aliases: AliasSet,
    /// Routability oracle; empty disables the unroutable rule.
    pub routable: AsnTable,
    pub spoof_check: bool,
}

impl ResponseFilter {
    pub fn new(aliases: AliasSet, routable: AsnTable, spoof_check: bool) -> Self {
        ResponseFilter {
            aliases,
            routable,
            spoof_check,
        }
    }

    pub fn classify(
        &self,
        target: Address128,
        lasthop: Address128,
        hop_count: u32,
        trace: TraceContext<'_>,
    ) -> ResponseVerdict {
        classify_response(
            target,
            lasthop,
            hop_count,
            &self.aliases,
            &self.routable,
            self.spoof_check.then_some(trace),
        )
    }
}

/// Applies the rules in order; the first match decides.
///
/// The spoof rule (only when `trace` is given) flags a reply that shares
/// fewer than 16 leading bits with the target and with every other
/// responsive hop of the trace, and whose `hop_count` is lower than the TTL
/// of some other responsive hop.
pub fn classify_response(
    target: Address128,
    lasthop: Address128,
    hop_count: u32,
    aliases: &AliasSet,
    routable: &AsnTable,
    trace: Option<TraceContext<'_>>,
) -> ResponseVerdict {
    let reason = if lasthop == target {
        Reason::SelfResponse
    } else if aliases.is_alias(lasthop) {
        Reason::Alias
    } else if is_link_local(lasthop) {
        Reason::LinkLocal
    } else if is_site_local(lasthop) {
        Reason::SiteLocal
    } else if is_v4_embedded(lasthop) {
        Reason::V4InV6
    } else if !routable.is_empty() && routable.lookup(lasthop).is_none() {
        Reason::Unroutable
    } else if trace.is_some_and(|t| looks_spoofed(target, lasthop, hop_count, t)) {
        Reason::SpoofSuspect
    } else {
        Reason::Ok
    };
    ResponseVerdict { reason }
}

fn looks_spoofed(target: Address128, lasthop: Address128, hop_count: u32, trace: TraceContext<'_>) -> bool {
    if matching_msb(target, lasthop) >= SPOOF_MSB {
        return false;
    }
    let others: Vec<(u32, Address128)> = trace
        .hops
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|a| (i as u32 + 1, a)))
        .filter(|(_, a)| *a != lasthop)
        .collect();
    if others.is_empty() {
        return false;
    }
    let isolated = others.iter().all(|(_, a)| matching_msb(*a, lasthop) < SPOOF_MSB);
    let out_of_order = others.iter().any(|(ttl, _)| hop_count < *ttl);
    isolated && out_of_order
}
