use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::address::{parse_address, AddrParseError, Address128};

/// A CIDR prefix. The base never carries bits below `len`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    base: Address128,
    len: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefixError {
    #[error("prefix length {0} out of range 0..=128")]
    Length(u32),
    #[error("missing '/len' in prefix {0:?}")]
    MissingLength(String),
    #[error("invalid prefix length in {0:?}")]
    BadLength(String),
    #[error(transparent)]
    Address(#[from] AddrParseError),
}

pub(crate) fn mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - len as u32)
    }
}

impl Prefix {
    /// Builds a prefix, clearing any host bits of `addr`.
    pub fn new(addr: Address128, len: u8) -> Result<Prefix, PrefixError> {
        if len > 128 {
            return Err(PrefixError::Length(len as u32));
        }
        Ok(Prefix {
            base: Address128(addr.0 & mask(len)),
            len,
        })
    }

    pub fn base(&self) -> Address128 {
        self.base
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, a: Address128) -> bool {
        a.0 & mask(self.len) == self.base.0
    }

    pub fn covers(&self, other: &Prefix) -> bool {
        other.len >= self.len && self.contains(other.base)
    }

    /// Number of addresses below the prefix as a power of two.
    pub fn host_bits(&self) -> u32 {
        128 - self.len as u32
    }

    pub fn last(&self) -> Address128 {
        Address128(self.base.0 | !mask(self.len))
    }
}

/// Canonical prefix of length `len` containing `a`.
pub fn subnet_id(a: Address128, len: u32) -> Result<Prefix, PrefixError> {
    if len > 128 {
        return Err(PrefixError::Length(len));
    }
    Prefix::new(a, len as u8)
}

/// Like [`subnet_id`] for lengths known to be valid.
pub fn prefix48(a: Address128) -> Prefix {
    Prefix {
        base: Address128(a.0 & mask(48)),
        len: 48,
    }
}

impl FromStr for Prefix {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| PrefixError::MissingLength(s.to_string()))?;
        let len: u8 = len
            .parse()
            .map_err(|_| PrefixError::BadLength(s.to_string()))?;
        Prefix::new(parse_address(addr)?, len)
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.len)
    }
}

impl fmt::Debug for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
