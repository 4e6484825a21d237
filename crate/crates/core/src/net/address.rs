use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A 128-bit IPv6 address. Bit 0 is the most significant bit.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address128(pub u128);

/// The low 64 bits of an address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct InterfaceId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid IPv6 address {input:?} at position {position}: {reason}")]
pub struct AddrParseError {
    pub input: String,
    /// Byte offset of the offending token.
    pub position: usize,
    pub reason: &'static str,
}

impl Address128 {
    pub const ZERO: Address128 = Address128(0);

    pub fn bits(self) -> u128 {
        self.0
    }

    pub fn iid(self) -> InterfaceId {
        InterfaceId(self.0 as u64)
    }

    /// The upper 64 bits (routing prefix + subnet id).
    pub fn network64(self) -> u64 {
        (self.0 >> 64) as u64
    }

    pub fn octets(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    /// Bit `k` counted from the most significant end.
    pub fn bit(self, k: u32) -> bool {
        debug_assert!(k < 128);
        (self.0 >> (127 - k)) & 1 == 1
    }

    pub fn wrapping_add(self, rhs: u128) -> Address128 {
        Address128(self.0.wrapping_add(rhs))
    }

    pub fn wrapping_sub(self, rhs: u128) -> Address128 {
        Address128(self.0.wrapping_sub(rhs))
    }
}

/// Length of the common most-significant-bit prefix of `a` and `b`.
pub fn matching_msb(a: Address128, b: Address128) -> u32 {
    (a.0 ^ b.0).leading_zeros()
}

/// Parses full, compressed, and IPv4-suffixed textual forms.
pub fn parse_address(text: &str) -> Result<Address128, AddrParseError> {
    let err = |position: usize, reason: &'static str| AddrParseError {
        input: text.to_string(),
        position,
        reason,
    };
    if text.is_empty() {
        return Err(err(0, "empty input"));
    }
    if let Some(bad) = text
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_hexdigit() || *c == ':' || *c == '.'))
    {
        return Err(err(bad.0, "unexpected character"));
    }

    let (head, tail) = match text.find("::") {
        Some(i) => {
            if let Some(j) = text[i + 2..].find("::") {
                return Err(err(i + 2 + j, "more than one '::'"));
            }
            (&text[..i], Some((i + 2, &text[i + 2..])))
        }
        None => (text, None),
    };

    let mut head_groups = Vec::with_capacity(8);
    parse_groups(text, head, 0, tail.is_none(), &mut head_groups)?;
    let mut tail_groups = Vec::with_capacity(8);
    if let Some((offset, part)) = tail {
        parse_groups(text, part, offset, true, &mut tail_groups)?;
    }

    let total = head_groups.len() + tail_groups.len();
    match tail {
        None if total != 8 => return Err(err(text.len(), "expected 8 groups")),
        Some((offset, _)) if total > 7 => return Err(err(offset - 2, "too many groups around '::'")),
        _ => {}
    }

    let mut groups = [0u16; 8];
    groups[..head_groups.len()].copy_from_slice(&head_groups);
    groups[8 - tail_groups.len()..].copy_from_slice(&tail_groups);
    let value = groups.iter().fold(0u128, |acc, g| (acc << 16) | *g as u128);
    Ok(Address128(value))
}

fn parse_groups(
    input: &str,
    part: &str,
    offset: usize,
    may_end_with_v4: bool,
    out: &mut Vec<u16>,
) -> Result<(), AddrParseError> {
    let err = |position: usize, reason: &'static str| AddrParseError {
        input: input.to_string(),
        position,
        reason,
    };
    if part.is_empty() {
        return Ok(());
    }
    let pieces: Vec<&str> = part.split(':').collect();
    let mut pos = offset;
    for (idx, piece) in pieces.iter().enumerate() {
        let last = idx + 1 == pieces.len();
        if piece.is_empty() {
            return Err(err(pos, "empty group"));
        }
        if piece.contains('.') {
            if !(last && may_end_with_v4) {
                return Err(err(pos, "embedded IPv4 only allowed at the end"));
            }
            let v4 = parse_dotted_quad(piece).ok_or_else(|| err(pos, "malformed IPv4 suffix"))?;
            out.push((v4 >> 16) as u16);
            out.push(v4 as u16);
        } else {
            if piece.len() > 4 {
                return Err(err(pos, "group longer than 4 hex digits"));
            }
            let g = u16::from_str_radix(piece, 16).map_err(|_| err(pos, "invalid hex group"))?;
            out.push(g);
        }
        if out.len() > 8 {
            return Err(err(pos, "too many groups"));
        }
        pos += piece.len() + 1;
    }
    Ok(())
}

fn parse_dotted_quad(s: &str) -> Option<u32> {
    let mut value = 0u32;
    let mut count = 0;
    for octet in s.split('.') {
        count += 1;
        if count > 4 || octet.is_empty() || octet.len() > 3 {
            return None;
        }
        if octet.len() > 1 && octet.starts_with('0') {
            return None;
        }
        if !octet.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let n: u32 = octet.parse().ok()?;
        if n > 255 {
            return None;
        }
        value = (value << 8) | n;
    }
    (count == 4).then_some(value)
}

impl FromStr for Address128 {
    type Err = AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_address(s)
    }
}

impl fmt::Display for Address128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&Ipv6Addr::from(self.0), f)
    }
}

impl fmt::Debug for Address128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl From<Ipv6Addr> for Address128 {
    fn from(a: Ipv6Addr) -> Self {
        Address128(u128::from(a))
    }
}

impl From<Address128> for Ipv6Addr {
    fn from(a: Address128) -> Self {
        Ipv6Addr::from(a.0)
    }
}

impl Serialize for Address128 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address128 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        parse_address(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for InterfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        write!(
            f,
            "{:04x}:{:04x}:{:04x}:{:04x}",
            (v >> 48) as u16,
            (v >> 32) as u16,
            (v >> 16) as u16,
            v as u16
        )
    }
}
