//! Modified EUI-64 interface identifiers (SLAAC).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::address::InterfaceId;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid MAC address {0:?}")]
pub struct MacParseError(pub String);

const UNIVERSAL_LOCAL: u8 = 0x02;

/// Inserts ff:fe between octets 3 and 4 and inverts the universal/local bit.
pub fn mac_to_eui64(mac: MacAddress) -> InterfaceId {
    let m = mac.0;
    let bytes = [m[0] ^ UNIVERSAL_LOCAL, m[1], m[2], 0xff, 0xfe, m[3], m[4], m[5]];
    InterfaceId(u64::from_be_bytes(bytes))
}

/// Recovers the MAC from an EUI-64 IID; `None` unless bytes 4-5 are ff:fe.
pub fn eui64_to_mac(iid: InterfaceId) -> Option<MacAddress> {
    eui64_embedded_bytes(iid).map(|mut m| {
        m[0] ^= UNIVERSAL_LOCAL;
        MacAddress(m)
    })
}

/// The six embedded octets without undoing the universal/local inversion.
pub fn eui64_embedded_bytes(iid: InterfaceId) -> Option<[u8; 6]> {
    let b = iid.0.to_be_bytes();
    if b[3] != 0xff || b[4] != 0xfe {
        return None;
    }
    Some([b[0], b[1], b[2], b[5], b[6], b[7]])
}

pub fn is_eui64(iid: InterfaceId) -> bool {
    let b = iid.0.to_be_bytes();
    b[3] == 0xff && b[4] == 0xfe
}

impl MacAddress {
    pub fn from_u64(v: u64) -> MacAddress {
        let b = v.to_be_bytes();
        MacAddress([b[2], b[3], b[4], b[5], b[6], b[7]])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for MacAddress {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut n = 0;
        for part in s.split([':', '-']) {
            if n == 6 || part.len() != 2 {
                return Err(MacParseError(s.to_string()));
            }
            out[n] = u8::from_str_radix(part, 16).map_err(|_| MacParseError(s.to_string()))?;
            n += 1;
        }
        if n != 6 {
            return Err(MacParseError(s.to_string()));
        }
        Ok(MacAddress(out))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hard_coded_huawei_pair() {
        let iid = InterfaceId(0x5a02_03ff_fe04_0506);
        let mac = eui64_to_mac(iid).unwrap();
        assert_eq!(mac.to_string(), "58:02:03:04:05:06");
        assert_eq!(mac_to_eui64(mac), iid);
    }

    #[test]
    fn zero_mac_sets_local_bit() {
        let iid = mac_to_eui64(MacAddress([0; 6]));
        assert_eq!(iid.to_string(), "0200:00ff:fe00:0000");
    }

    #[test]
    fn non_eui64_iid_is_rejected() {
        assert_eq!(eui64_to_mac(InterfaceId(1)), None);
        assert!(!is_eui64(InterfaceId(1)));
        // ff:fe in the wrong place
        assert_eq!(eui64_to_mac(InterfaceId(0x00ff_fe00_0000_0000)), None);
    }

    #[test]
    fn raw_bytes_keep_the_flipped_bit() {
        let raw = eui64_embedded_bytes(InterfaceId(0x5a02_03ff_fe04_0506)).unwrap();
        assert_eq!(raw, [0x5a, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn mac_text() {
        let m: MacAddress = "58:02:03:04:05:06".parse().unwrap();
        assert_eq!(m.0, [0x58, 2, 3, 4, 5, 6]);
        assert!("58:02:03:04:05".parse::<MacAddress>().is_err());
        assert!("58:02:03:04:05:06:07".parse::<MacAddress>().is_err());
        assert!("zz:02:03:04:05:06".parse::<MacAddress>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(bytes in any::<[u8; 6]>()) {
            let m = MacAddress(bytes);
            let iid = mac_to_eui64(m);
            prop_assert!(is_eui64(iid));
            prop_assert_eq!(eui64_to_mac(iid), Some(m));
        }
    }
}
