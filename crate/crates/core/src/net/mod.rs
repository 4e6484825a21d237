//! Address and prefix arithmetic shared by every other module.

mod address;
mod eui64;
mod prefix;
mod table;

pub use address::{matching_msb, parse_address, AddrParseError, Address128, InterfaceId};
pub use eui64::{
    eui64_embedded_bytes, eui64_to_mac, is_eui64, mac_to_eui64, MacAddress, MacParseError,
};
pub use prefix::{prefix48, subnet_id, Prefix, PrefixError};
pub use table::{Asn, AsnTable, PrefixMap, TableError};
