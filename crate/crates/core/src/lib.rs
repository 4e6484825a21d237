//! Multi-round discovery of IPv6 periphery (last-hop) routers.

pub mod analysis;
pub mod campaign;
pub mod filter;
pub mod net;
pub mod prober;
pub mod seed;
