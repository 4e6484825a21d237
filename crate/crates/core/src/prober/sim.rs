//! Ground-truth network simulator.
//!
//! Each provider owns a core prefix and a pool of target /48s. Every /48 is
//! partitioned into delegated subnets ("slots"); customers (CPEs) occupy
//! slots and answer as the last hop for probes into their slot. A path is
//! `core_depth` core routers, one aggregation router per /48, then the CPE.
//! All randomness is a pure function of the network seed, so responses are
//! reproducible regardless of probe order.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ProbeBatch, ProbeError, Prober};
use crate::net::{is_eui64, mac_to_eui64, prefix48, Address128, AsnTable, InterfaceId, MacAddress, Prefix, PrefixMap};
use crate::seed::TraceResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default)]
    pub seed: u64,
    pub providers: Vec<ProviderSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub asn: u32,
    pub core_prefix: Prefix,
    #[serde(default = "default_core_depth")]
    pub core_depth: u8,
    pub target_pool: Vec<PoolEntry>,
    #[serde(default)]
    pub delegation: Delegation,
    /// Live CPEs per /48; `None` puts one CPE in every delegated subnet.
    #[serde(default)]
    pub customers: Option<u32>,
    #[serde(default)]
    pub vacant: Vacant,
    #[serde(default)]
    pub iid_style: IidStyle,
    #[serde(default)]
    pub alias_prefixes: Vec<Prefix>,
    #[serde(default)]
    pub rotation: Option<Rotation>,
    #[serde(default)]
    pub anon_prob: f64,
    /// Max responsive traces per simulated second.
    #[serde(default)]
    pub rate_limit: Option<u32>,
}

fn default_core_depth() -> u8 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolEntry {
    Plain(Prefix),
    Detailed {
        prefix: Prefix,
        #[serde(default)]
        delegation: Option<Delegation>,
        #[serde(default)]
        customers: Option<u32>,
    },
}

impl PoolEntry {
    pub fn prefix(&self) -> Prefix {
        match self {
            PoolEntry::Plain(p) | PoolEntry::Detailed { prefix: p, .. } => *p,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delegation {
    Uniform56,
    Uniform60,
    #[default]
    Uniform64,
    Uniform(u8),
    /// `(subnet length, fraction of the /48)`, laid out in order.
    Mixed(Vec<(u8, f64)>),
}

/// What answers for probes into a slot without a CPE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vacant {
    /// The aggregation router is the last hop.
    #[default]
    ProviderHop,
    /// The whole trace is dropped.
    Silent,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IidStyle {
    Eui64 {
        /// Number of distinct MACs handed out round-robin; `None` = one per CPE.
        #[serde(default)]
        mac_pool: Option<u32>,
        /// Explicit MACs, used round-robin instead of generated ones.
        #[serde(default)]
        macs: Vec<MacAddress>,
    },
    LowEntropy(u64),
    #[default]
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rotation {
    pub period_rounds: u32,
    /// Width of the slot-index field the rotation may change.
    #[serde(default = "default_rotate_bits")]
    pub rotate_bits: u8,
}

fn default_rotate_bits() -> u8 {
    16
}

#[derive(Debug, Error)]
pub enum SimSpecError {
    #[error("simulator spec is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading simulator spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("provider {provider}: {message}")]
    Invalid { provider: usize, message: String },
}

/// One target /48 materialized into slots.
#[derive(Clone, Debug)]
struct Block {
    prefix: Prefix,
    provider: usize,
    index_in_provider: u32,
    slots: Vec<Prefix>,
    /// (group, index within group) per slot
    slot_pos: Vec<(u32, u32)>,
    groups: Vec<Vec<u32>>,
    /// customer (local index) whose home is the slot
    home_owner: Vec<Option<u32>>,
    customers: u64,
    customer_base: u64,
}

#[derive(Clone, Debug)]
struct Provider {
    spec: ProviderSpec,
    oui: [u8; 3],
}

/// Materialized simulator network. Immutable; see [`SimProber`] for the
/// stateful probing front end.
#[derive(Clone, Debug)]
pub struct SimNetwork {
    seed: u64,
    providers: Vec<Provider>,
    blocks: Vec<Block>,
    block_index: HashMap<u128, usize>,
    aliases: PrefixMap<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSummary {
    pub seed: u64,
    pub providers: usize,
    pub target_48s: usize,
    pub delegated_subnets: u64,
    pub cpes: u64,
    pub alias_prefixes: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, p| splitmix64(acc ^ p))
}

fn invalid(provider: usize, message: impl Into<String>) -> SimSpecError {
    SimSpecError::Invalid {
        provider,
        message: message.into(),
    }
}

fn partition(block: Prefix, delegation: &Delegation, provider: usize) -> Result<Vec<Prefix>, SimSpecError> {
    let parts: Vec<(u8, f64)> = match delegation {
        Delegation::Uniform56 => vec![(56, 1.0)],
        Delegation::Uniform60 => vec![(60, 1.0)],
        Delegation::Uniform64 => vec![(64, 1.0)],
        Delegation::Uniform(len) => vec![(*len, 1.0)],
        Delegation::Mixed(parts) => parts.clone(),
    };
    if parts.is_empty() {
        return Err(invalid(provider, "empty delegation mix"));
    }
    let total: f64 = parts.iter().map(|(_, f)| f).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(provider, format!("delegation fractions sum to {total}, expected 1")));
    }
    const UNITS: u64 = 1 << 16; // /64s in a /48
    let mut offset = 0u64;
    let mut out = Vec::new();
    for (len, frac) in parts {
        if !(48..=64).contains(&len) || len % 4 != 0 {
            return Err(invalid(provider, format!("delegation length /{len} is not a nybble boundary in 48..=64")));
        }
        if frac <= 0.0 {
            return Err(invalid(provider, format!("non-positive fraction for /{len}")));
        }
        let units_f = frac * UNITS as f64;
        let units = units_f.round() as u64;
        let step = 1u64 << (64 - len);
        if (units_f - units as f64).abs() > 1e-6 || units % step != 0 || offset % step != 0 {
            return Err(invalid(
                provider,
                format!("fraction {frac} of /{len} subnets does not fall on /{len} boundaries"),
            ));
        }
        for i in 0..units / step {
            let base = block.base().0 + (((offset + i * step) as u128) << 64);
            out.push(Prefix::new(Address128(base), len).expect("len <= 64"));
        }
        offset += units;
    }
    debug_assert_eq!(offset, UNITS);
    Ok(out)
}

impl SimSpec {
    pub fn from_reader<R: Read>(r: R) -> Result<SimSpec, SimSpecError> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn from_json(text: &str) -> Result<SimSpec, SimSpecError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Validates `spec` and materializes the delegation map.
pub fn build_sim_network(spec: &SimSpec, seed: u64) -> Result<SimNetwork, SimSpecError> {
    let mut providers = Vec::new();
    let mut blocks = Vec::new();
    let mut block_index = HashMap::new();
    let mut aliases = PrefixMap::new();

    for (pi, ps) in spec.providers.iter().enumerate() {
        if ps.core_prefix.len() > 48 {
            return Err(invalid(pi, "core_prefix must be /48 or shorter"));
        }
        if !(0.0..=1.0).contains(&ps.anon_prob) {
            return Err(invalid(pi, "anon_prob must be within [0, 1]"));
        }
        if let Some(rot) = ps.rotation {
            if rot.period_rounds == 0 {
                return Err(invalid(pi, "rotation.period_rounds must be >= 1"));
            }
            if !(1..=16).contains(&rot.rotate_bits) {
                return Err(invalid(pi, "rotation.rotate_bits must be within 1..=16"));
            }
        }
        if let IidStyle::Eui64 { mac_pool: Some(0), .. } = ps.iid_style {
            return Err(invalid(pi, "mac_pool must be positive"));
        }
        if ps.rate_limit == Some(0) {
            return Err(invalid(pi, "rate_limit must be positive"));
        }
        let h = mix(&[seed, pi as u64, 0x0u64]);
        // locally administered unicast OUI
        let oui = [((h >> 16) as u8 & 0xfc) | 0x02, (h >> 8) as u8, h as u8];
        providers.push(Provider { spec: ps.clone(), oui });

        let mut customer_base = 0u64;
        for (bi, entry) in ps.target_pool.iter().enumerate() {
            let prefix = entry.prefix();
            if prefix.len() != 48 {
                return Err(invalid(pi, format!("target {prefix} is not a /48")));
            }
            if ps.core_prefix.covers(&prefix) {
                return Err(invalid(pi, format!("target {prefix} overlaps the core prefix")));
            }
            if block_index.contains_key(&prefix.base().0) {
                return Err(invalid(pi, format!("target {prefix} listed twice")));
            }
            let (delegation, customers) = match entry {
                PoolEntry::Plain(_) => (&ps.delegation, ps.customers),
                PoolEntry::Detailed { delegation, customers, .. } => (
                    delegation.as_ref().unwrap_or(&ps.delegation),
                    customers.or(ps.customers),
                ),
            };
            let slots = partition(prefix, delegation, pi)?;
            let slot_count = slots.len() as u64;
            let n = customers.map_or(slot_count, u64::from);
            if n > slot_count {
                return Err(invalid(pi, format!("{n} customers exceed {slot_count} subnets of {prefix}")));
            }
            let rotate_bits = ps.rotation.map_or(16, |r| r.rotate_bits) as u32;
            let mut groups: Vec<Vec<u32>> = Vec::new();
            let mut slot_pos = Vec::with_capacity(slots.len());
            let mut last_key = None;
            for (si, s) in slots.iter().enumerate() {
                let key = s.base().0 >> (64 + rotate_bits);
                if last_key != Some(key) {
                    groups.push(Vec::new());
                    last_key = Some(key);
                }
                let g = groups.len() - 1;
                slot_pos.push((g as u32, groups[g].len() as u32));
                groups[g].push(si as u32);
            }
            let mut home_owner = vec![None; slots.len()];
            for c in 0..n {
                let home = (c * slot_count / n.max(1)) as usize;
                home_owner[home] = Some(c as u32);
            }
            block_index.insert(prefix.base().0, blocks.len());
            blocks.push(Block {
                prefix,
                provider: pi,
                index_in_provider: bi as u32,
                slots,
                slot_pos,
                groups,
                home_owner,
                customers: n,
                customer_base,
            });
            customer_base += n;
        }
        for a in &ps.alias_prefixes {
            aliases.insert(*a, pi);
        }
    }
    Ok(SimNetwork {
        seed,
        providers,
        blocks,
        block_index,
        aliases,
    })
}

/// Where a probe ends up, before loss and rate limiting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Destination {
    Unknown,
    Alias { provider: usize, responder: Address128 },
    Cpe { block: usize, address: Address128 },
    Vacant { block: usize },
}

impl SimNetwork {
    pub fn from_spec(spec: &SimSpec) -> Result<SimNetwork, SimSpecError> {
        build_sim_network(spec, spec.seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            seed: self.seed,
            providers: self.providers.len(),
            target_48s: self.blocks.len(),
            delegated_subnets: self.blocks.iter().map(|b| b.slots.len() as u64).sum(),
            cpes: self.blocks.iter().map(|b| b.customers).sum(),
            alias_prefixes: self.aliases.len(),
        }
    }

    pub fn target_prefixes(&self) -> Vec<Prefix> {
        let mut v: Vec<Prefix> = self.blocks.iter().map(|b| b.prefix).collect();
        v.sort();
        v
    }

    /// Delegated subnets of a target /48, in address order.
    pub fn delegated_subnets(&self, prefix: &Prefix) -> Option<&[Prefix]> {
        self.block_index
            .get(&prefix.base().0)
            .map(|&i| self.blocks[i].slots.as_slice())
    }

    /// Routable prefixes: every core prefix and target /48, mapped to the
    /// provider's ASN.
    pub fn asn_table(&self) -> AsnTable {
        let mut t = AsnTable::new();
        for p in &self.providers {
            t.insert(p.spec.core_prefix, p.spec.asn);
        }
        for b in &self.blocks {
            t.insert(b.prefix, self.providers[b.provider].spec.asn);
        }
        t
    }

    pub fn alias_prefixes(&self) -> Vec<Prefix> {
        self.aliases.entries().into_iter().map(|(p, _)| p).collect()
    }

    fn epoch(&self, provider: usize, round: u32) -> u32 {
        self.providers[provider]
            .spec
            .rotation
            .map_or(0, |r| round / r.period_rounds)
    }

    pub fn mac_of(&self, provider: usize, customer: u64) -> Option<MacAddress> {
        let p = &self.providers[provider];
        match &p.spec.iid_style {
            IidStyle::Eui64 { mac_pool, macs } => {
                if !macs.is_empty() {
                    return Some(macs[(customer % macs.len() as u64) as usize]);
                }
                let i = mac_pool.map_or(customer, |m| customer % m as u64);
                let mut b = [p.oui[0], p.oui[1], p.oui[2], 0, 0, 0];
                // more than 2^24 customers spill into the OUI
                b[2] = b[2].wrapping_add((i >> 24) as u8);
                b[3] = (i >> 16) as u8;
                b[4] = (i >> 8) as u8;
                b[5] = i as u8;
                Some(MacAddress(b))
            }
            _ => None,
        }
    }

    fn iid_of(&self, provider: usize, customer: u64) -> InterfaceId {
        match &self.providers[provider].spec.iid_style {
            IidStyle::Eui64 { .. } => mac_to_eui64(self.mac_of(provider, customer).expect("eui64 style")),
            IidStyle::LowEntropy(c) => InterfaceId(*c),
            IidStyle::Random => {
                let mut v = mix(&[self.seed, provider as u64, customer, 0x11D]);
                if is_eui64(InterfaceId(v)) {
                    v ^= 1 << 24;
                }
                InterfaceId(v)
            }
        }
    }

    fn core_hop(&self, provider: usize, depth: u8) -> Address128 {
        Address128(self.providers[provider].spec.core_prefix.base().0 | (depth as u128 + 1))
    }

    fn aggregation_hop(&self, block: &Block) -> Address128 {
        let core = self.providers[block.provider].spec.core_prefix.base().0;
        Address128(core + (((block.index_in_provider as u128) + 1) << 64) + 1)
    }

    fn slot_of(block: &Block, a: Address128) -> usize {
        block.slots.partition_point(|s| s.base() <= a) - 1
    }

    /// Customer occupying `slot` at `epoch`.
    fn occupant(block: &Block, slot: usize, epoch: u32) -> Option<u32> {
        let (g, i) = block.slot_pos[slot];
        let group = &block.groups[g as usize];
        let m = group.len() as u64;
        let home_idx = (i as u64 + m - (epoch as u64 % m)) % m;
        block.home_owner[group[home_idx as usize] as usize]
    }

    /// Slot a customer occupies at `epoch`.
    fn slot_at(block: &Block, customer: u32, epoch: u32) -> usize {
        let slot_count = block.slots.len() as u64;
        let home = (customer as u64 * slot_count / block.customers) as usize;
        let (g, i) = block.slot_pos[home];
        let group = &block.groups[g as usize];
        let m = group.len() as u64;
        group[((i as u64 + epoch as u64) % m) as usize] as usize
    }

    fn cpe_address(&self, block: &Block, slot: usize, customer: u32) -> Address128 {
        let iid = self.iid_of(block.provider, block.customer_base + customer as u64);
        Address128(block.slots[slot].base().0 | iid.0 as u128)
    }

    pub(crate) fn resolve(&self, target: Address128, round: u32) -> Destination {
        if let Some((alias, &provider)) = self.aliases.longest_match(target) {
            return Destination::Alias {
                provider,
                responder: Address128(alias.base().0 | 1),
            };
        }
        let Some(&bi) = self.block_index.get(&prefix48(target).base().0) else {
            return Destination::Unknown;
        };
        let block = &self.blocks[bi];
        let slot = Self::slot_of(block, target);
        let epoch = self.epoch(block.provider, round);
        match Self::occupant(block, slot, epoch) {
            Some(c) => Destination::Cpe {
                block: bi,
                address: self.cpe_address(block, slot, c),
            },
            None => Destination::Vacant { block: bi },
        }
    }

    /// Ground-truth CPE last hop for `target` during `round`.
    pub fn cpe_for(&self, target: Address128, round: u32) -> Option<Address128> {
        match self.resolve(target, round) {
            Destination::Cpe { address, .. } => Some(address),
            _ => None,
        }
    }

    /// Every live CPE address of a target /48 during `round`.
    pub fn cpes_in(&self, prefix: &Prefix, round: u32) -> Vec<Address128> {
        let Some(&bi) = self.block_index.get(&prefix.base().0) else {
            return Vec::new();
        };
        let block = &self.blocks[bi];
        let epoch = self.epoch(block.provider, round);
        let mut out: Vec<Address128> = block
            .home_owner
            .iter()
            .flatten()
            .map(|&c| self.cpe_address(block, Self::slot_at(block, c, epoch), c))
            .collect();
        out.sort();
        out
    }

    /// MAC → customer count, over all EUI-64 providers.
    pub fn mac_population(&self) -> BTreeMap<MacAddress, u64> {
        let mut out = BTreeMap::new();
        for b in &self.blocks {
            for c in b.home_owner.iter().flatten() {
                if let Some(m) = self.mac_of(b.provider, b.customer_base + *c as u64) {
                    *out.entry(m).or_insert(0) += 1;
                }
            }
        }
        out
    }

    fn provider_of(&self, dest: Destination) -> Option<usize> {
        match dest {
            Destination::Unknown => None,
            Destination::Alias { provider, .. } => Some(provider),
            Destination::Cpe { block, .. } | Destination::Vacant { block } => Some(self.blocks[block].provider),
        }
    }

    /// The full trace for one probe, ignoring rate limits.
    pub fn trace(&self, target: Address128, round: u32, max_ttl: u8) -> TraceResult {
        let dest = self.resolve(target, round);
        let Some(provider) = self.provider_of(dest) else {
            return TraceResult::anonymous(target);
        };
        let spec = &self.providers[provider].spec;
        let mut hops: Vec<Option<Address128>> = (0..spec.core_depth).map(|d| Some(self.core_hop(provider, d))).collect();
        match dest {
            Destination::Alias { responder, .. } => hops.push(Some(responder)),
            Destination::Cpe { block, address } => {
                hops.push(Some(self.aggregation_hop(&self.blocks[block])));
                let draw = mix(&[self.seed, target.0 as u64, (target.0 >> 64) as u64, round as u64]);
                let lost = (draw >> 11) as f64 / (1u64 << 53) as f64;
                if lost >= spec.anon_prob {
                    hops.push(Some(address));
                }
            }
            Destination::Vacant { block } => match spec.vacant {
                Vacant::ProviderHop => hops.push(Some(self.aggregation_hop(&self.blocks[block]))),
                Vacant::Silent => return TraceResult::anonymous(target),
            },
            Destination::Unknown => unreachable!(),
        }
        hops.truncate(max_ttl as usize);
        TraceResult::new(target, hops)
    }
}

/// Stateful front end: tracks the round (for rotation) and per-provider
/// reply budgets per simulated second.
#[derive(Clone, Debug)]
pub struct SimProber {
    net: SimNetwork,
    round: u32,
    window_counts: HashMap<(usize, u64), u32>,
    probes_sent: u64,
}

impl SimProber {
    pub fn new(net: SimNetwork) -> SimProber {
        SimProber {
            net,
            round: 0,
            window_counts: HashMap::new(),
            probes_sent: 0,
        }
    }

    pub fn net(&self) -> &SimNetwork {
        &self.net
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn probes_sent(&self) -> u64 {
        self.probes_sent
    }

    fn trace_one(&mut self, target: Address128, send_ms: u64, batch: &ProbeBatch) -> TraceResult {
        let dest = self.net.resolve(target, self.round);
        if let Some(p) = self.net.provider_of(dest) {
            if let Some(limit) = self.net.providers[p].spec.rate_limit {
                let count = self.window_counts.entry((p, send_ms / 1000)).or_insert(0);
                if *count >= limit {
                    return TraceResult::anonymous(target);
                }
                *count += 1;
            }
        }
        let mut t = self.net.trace(target, self.round, batch.max_ttl);
        let min = batch.min_ttl.max(1) as usize;
        for h in t.hops.iter_mut().take(min - 1) {
            *h = None;
        }
        t.recv_ms = t
            .hops
            .iter()
            .enumerate()
            .map(|(i, h)| h.map(|_| send_ms + 2 * (i as u64 + 1)))
            .collect();
        t
    }
}

impl Prober for SimProber {
    fn probe(&mut self, batch: &ProbeBatch) -> Result<Vec<TraceResult>, ProbeError> {
        if batch.targets.is_empty() {
            return Err(ProbeError::EmptyBatch);
        }
        self.probes_sent += batch.targets.len() as u64;
        Ok(batch
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| self.trace_one(*t, batch.send_ms(i), batch))
            .collect())
    }

    fn begin_round(&mut self, round_index: u32) {
        self.round = round_index;
    }
}
