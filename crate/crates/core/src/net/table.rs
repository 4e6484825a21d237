//! Longest-prefix-match tables.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

use super::address::Address128;
use super::prefix::{mask, Prefix, PrefixError};

/// Longest-prefix-match map with one hash table per prefix length.
#[derive(Clone, Debug)]
pub struct PrefixMap<V> {
    by_len: Vec<HashMap<u128, V>>,
    // lengths with at least one entry, longest first
    lengths: Vec<u8>,
    count: usize,
}

impl<V> Default for PrefixMap<V> {
    fn default() -> Self {
        PrefixMap {
            by_len: (0..=128).map(|_| HashMap::new()).collect(),
            lengths: Vec::new(),
            count: 0,
        }
    }
}

impl<V> PrefixMap<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts, returning the value previously stored for the same prefix.
    pub fn insert(&mut self, prefix: Prefix, value: V) -> Option<V> {
        let len = prefix.len();
        let old = self.by_len[len as usize].insert(prefix.base().0, value);
        if old.is_none() {
            self.count += 1;
            if let Err(pos) = self.lengths.binary_search_by(|l| len.cmp(l)) {
                self.lengths.insert(pos, len);
            }
        }
        old
    }

    pub fn longest_match(&self, a: Address128) -> Option<(Prefix, &V)> {
        self.lengths.iter().find_map(|&len| {
            let key = a.0 & mask(len);
            self.by_len[len as usize]
                .get(&key)
                .map(|v| (Prefix::new(Address128(key), len).expect("len <= 128"), v))
        })
    }

    pub fn get_exact(&self, p: &Prefix) -> Option<&V> {
        self.by_len[p.len() as usize].get(&p.base().0)
    }

    pub fn contains(&self, a: Address128) -> bool {
        self.longest_match(a).is_some()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// All entries sorted by prefix.
    pub fn entries(&self) -> Vec<(Prefix, &V)> {
        let mut out: Vec<(Prefix, &V)> = self
            .lengths
            .iter()
            .flat_map(|&len| {
                self.by_len[len as usize]
                    .iter()
                    .map(move |(k, v)| (Prefix::new(Address128(*k), len).expect("len <= 128"), v))
            })
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Prefix {
        line: usize,
        #[source]
        source: PrefixError,
    },
    #[error("reading table: {0}")]
    Io(#[from] std::io::Error),
}

pub type Asn = u32;

/// Offline prefix-to-origin-AS table.
#[derive(Clone, Debug, Default)]
pub struct AsnTable {
    map: PrefixMap<Asn>,
}

impl AsnTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I: IntoIterator<Item = (Prefix, Asn)>>(entries: I) -> Self {
        let mut t = AsnTable::new();
        for (p, asn) in entries {
            t.insert(p, asn);
        }
        t
    }

    /// Equal prefixes: the later entry wins and a warning is logged.
    pub fn insert(&mut self, prefix: Prefix, asn: Asn) {
        if let Some(old) = self.map.insert(prefix, asn) {
            if old != asn {
                log::warn!("duplicate prefix {prefix}: AS{old} replaced by AS{asn}");
            }
        }
    }

    pub fn lookup(&self, a: Address128) -> Option<Asn> {
        self.map.longest_match(a).map(|(_, asn)| *asn)
    }

    pub fn covering(&self, a: Address128) -> Option<Prefix> {
        self.map.longest_match(a).map(|(p, _)| p)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn entries(&self) -> Vec<(Prefix, Asn)> {
        self.map.entries().into_iter().map(|(p, a)| (p, *a)).collect()
    }

    /// Reads `prefix<TAB>asn` lines. The three-column CAIDA layout
    /// `addr<TAB>len<TAB>asn` is accepted too; for multi-origin fields
    /// (`a_b` or `a,b`) the first origin is used.
    pub fn load<R: BufRead>(reader: R) -> Result<AsnTable, TableError> {
        let mut table = AsnTable::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let (prefix_text, asn_text) = match cols.as_slice() {
                [p, asn] => (p.to_string(), *asn),
                [addr, len, asn] => (format!("{addr}/{len}"), *asn),
                _ => {
                    return Err(TableError::Syntax {
                        line: line_no,
                        message: format!("expected 'prefix<TAB>asn', got {line:?}"),
                    })
                }
            };
            let prefix: Prefix = prefix_text
                .parse()
                .map_err(|source| TableError::Prefix { line: line_no, source })?;
            let first = asn_text.split(['_', ',']).next().unwrap_or_default();
            let asn: Asn = first.parse().map_err(|_| TableError::Syntax {
                line: line_no,
                message: format!("invalid ASN {asn_text:?}"),
            })?;
            table.insert(prefix, asn);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(s: &str) -> Address128 {
        s.parse().unwrap()
    }
    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    #[test]
    fn lookup_examples() {
        let t = AsnTable::from_entries([(p("2a03:4980::/32"), 202053)]);
        assert_eq!(t.lookup(a("2a03:4980::6:0:2")), Some(202053));
        assert_eq!(AsnTable::new().lookup(a("2a03:4980::6:0:2")), None);
        let t = AsnTable::from_entries([(p("::/0"), 1), (p("2600::/12"), 2)]);
        assert_eq!(t.lookup(a("2600:8805:9200::1")), Some(2));
        assert_eq!(t.lookup(a("2001:db8::1")), Some(1));
    }

    #[test]
    fn last_loaded_wins() {
        let t = AsnTable::from_entries([(p("2001:db8::/32"), 1), (p("2001:db8::/32"), 2)]);
        assert_eq!(t.lookup(a("2001:db8::1")), Some(2));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn load_file_formats() {
        let text = "# comment\n\n2a03:4980::/32\t202053\n2600::\t12\t2_3\n";
        let t = AsnTable::load(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup(a("2600:1::")), Some(2));
        let err = AsnTable::load("2a03::/32\tnotanumber\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
        let err = AsnTable::load("\n\nbogus\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"));
    }

    fn linear_scan(entries: &[(Prefix, Asn)], x: Address128) -> Option<Asn> {
        // later duplicates override earlier ones, same as the table
        let mut best: Option<(u8, Asn)> = None;
        for (pfx, asn) in entries {
            if pfx.contains(x) && best.map_or(true, |(l, _)| pfx.len() >= l) {
                best = Some((pfx.len(), *asn));
            }
        }
        best.map(|(_, asn)| asn)
    }

    proptest! {
        #[test]
        fn agrees_with_linear_scan(
            raw in proptest::collection::vec((any::<u16>(), 0u8..=24, 0u32..50), 0..40),
            probes in proptest::collection::vec(any::<u16>(), 1..40),
        ) {
            // keep the address space small so matches actually happen
            let entries: Vec<(Prefix, Asn)> = raw
                .iter()
                .map(|(hi, len, asn)| (Prefix::new(Address128((*hi as u128) << 112), *len).unwrap(), *asn))
                .collect();
            let table = AsnTable::from_entries(entries.iter().copied());
            for hi in probes {
                let x = Address128(((hi as u128) << 112) | 0xdead);
                prop_assert_eq!(table.lookup(x), linear_scan(&entries, x));
            }
        }
    }
}
