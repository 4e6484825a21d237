//! Browser demo: simulate one /48, inspect an address, sweep η.
//!
//! Every export takes plain values and returns a JSON string; errors come
//! back as a thrown string.

use std::collections::{BTreeMap, BTreeSet};

use edgy::analysis::{eta_sweep, iid_entropy, lasthops_by_prefix, EtaSweepRow};
use edgy::campaign::{run_campaign, CampaignConfig, Decision, Status};
use edgy::filter::{is_link_local, is_site_local, is_v4_embedded, AliasSet, ResponseFilter};
use edgy::net::{eui64_to_mac, prefix48, subnet_id, Address128, Prefix};
use edgy::prober::{build_sim_network, Delegation, IidStyle, PoolEntry, ProviderSpec, SimNetwork, SimProber, SimSpec};
use edgy::seed::CandidateSet;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_PREFIX: &str = "2600:8805:9200::/48";

fn provider(pool: Vec<PoolEntry>, delegation: Delegation, customers: Option<u32>) -> ProviderSpec {
    ProviderSpec {
        asn: 64500,
        core_prefix: "2001:db8::/32".parse().unwrap(),
        core_depth: 3,
        target_pool: pool,
        delegation,
        customers,
        vacant: Default::default(),
        iid_style: IidStyle::Random,
        alias_prefixes: Vec::new(),
        rotation: None,
        anon_prob: 0.0,
        rate_limit: None,
    }
}

fn campaign(net: &SimNetwork, config: CampaignConfig) -> Result<edgy::campaign::CampaignRun, String> {
    let cands = CandidateSet::from_prefixes(net.target_prefixes());
    let filter = ResponseFilter::new(AliasSet::from_prefixes(net.alias_prefixes()), net.asn_table(), true);
    let mut prober = SimProber::new(net.clone());
    run_campaign(&cands, &mut prober, config, &filter).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RoundView {
    mask: u8,
    probes: u64,
    unique_lasthops: usize,
    advanced: bool,
}

#[derive(Serialize)]
struct Cell {
    /// Delegated length of the subnet holding the /56's first address.
    len: u8,
    lasthops: usize,
}

#[derive(Serialize)]
struct PrefixView {
    prefix: Prefix,
    status: Status,
    probes: u64,
    cpes: u64,
    discovered: usize,
    rounds: Vec<RoundView>,
    /// 256 cells, one per /56 in address order.
    grid: Vec<Cell>,
}

/// Runs a campaign over one simulated /48. `delegation` uses the sim spec
/// syntax, e.g. `"uniform56"` or `{"mixed": [[56, 0.5], [64, 0.5]]}`;
/// `customers` of 0 fills every delegated subnet.
pub fn simulate_prefix_json(delegation: &str, customers: u32, seed: u64, eta1: usize, eta2: usize) -> Result<String, String> {
    let delegation: Delegation = serde_json::from_str(delegation).map_err(|e| format!("delegation: {e}"))?;
    let prefix: Prefix = DEMO_PREFIX.parse().unwrap();
    let spec = SimSpec {
        seed,
        providers: vec![provider(
            vec![PoolEntry::Plain(prefix)],
            delegation,
            (customers > 0).then_some(customers),
        )],
    };
    let net = build_sim_network(&spec, seed).map_err(|e| e.to_string())?;
    let run = campaign(
        &net,
        CampaignConfig {
            eta1,
            eta2,
            rng_seed: seed,
            ..Default::default()
        },
    )?;
    let state = &run.state.prefixes[&prefix];

    let slots = net.delegated_subnets(&prefix).unwrap_or_default();
    let mut per_cell: BTreeMap<u128, BTreeSet<Address128>> = BTreeMap::new();
    for r in &run.records {
        per_cell.entry(r.target.0 >> 72).or_default().insert(r.lasthop);
    }
    let grid = (0..256u128)
        .map(|i| {
            let base = Address128(prefix.base().0 | i << 72);
            let len = slots.iter().find(|s| s.contains(base)).map_or(0, |s| s.len());
            Cell {
                len,
                lasthops: per_cell.get(&(base.0 >> 72)).map_or(0, BTreeSet::len),
            }
        })
        .collect();

    let view = PrefixView {
        prefix,
        status: state.status,
        probes: state.probes,
        cpes: net.summary().cpes,
        discovered: run.records.iter().map(|r| r.lasthop).collect::<BTreeSet<_>>().len(),
        rounds: state
            .rounds
            .iter()
            .map(|l| RoundView {
                mask: l.mask,
                probes: l.probes,
                unique_lasthops: l.unique_lasthops,
                advanced: l.decision == Decision::Advance,
            })
            .collect(),
        grid,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct AddressView {
    address: Address128,
    prefix48: Prefix,
    subnet64: Prefix,
    iid: String,
    eui64_mac: Option<String>,
    iid_entropy: f64,
    link_local: bool,
    site_local: bool,
    v4_embedded: bool,
}

pub fn inspect_address_json(text: &str) -> Result<String, String> {
    let a: Address128 = text.trim().parse().map_err(|e| format!("{e}"))?;
    let view = AddressView {
        address: a,
        prefix48: prefix48(a),
        subnet64: subnet_id(a, 64).map_err(|e| e.to_string())?,
        iid: format!("{:016x}", a.iid().0),
        eui64_mac: eui64_to_mac(a.iid()).map(|m| m.to_string()),
        iid_entropy: iid_entropy(a),
        link_local: is_link_local(a),
        site_local: is_site_local(a),
        v4_embedded: is_v4_embedded(a),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Policies the sweep corpus draws from.
fn policy(k: u64) -> Delegation {
    match k % 6 {
        0 => Delegation::Uniform56,
        1 => Delegation::Uniform60,
        2 => Delegation::Uniform64,
        3 => Delegation::Uniform(52),
        4 => Delegation::Mixed(vec![(56, 0.5), (60, 0.25), (64, 0.25)]),
        _ => Delegation::Mixed(vec![(52, 0.75), (60, 0.25)]),
    }
}

#[derive(Serialize)]
struct SweepView {
    prefixes: usize,
    rows: Vec<EtaSweepRow>,
}

/// Builds `prefixes` random /48s, probes each at /56 and /60 and prices
/// the second round for every η in `etas`.
pub fn eta_sweep_json(seed: u64, prefixes: u32, etas: &[usize]) -> Result<String, String> {
    if prefixes == 0 || prefixes > 64 {
        return Err("prefixes must be within 1..=64".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<(Prefix, Delegation, bool)> = (0..prefixes as u128)
        .map(|i| {
            let prefix = Prefix::new(Address128((0x2600_0100_0000u128 + i) << 80), 48).unwrap();
            (prefix, policy(rng.next_u64()), rng.next_u64() % 2 == 0)
        })
        .collect();
    let entries = |customers: &dyn Fn(&Prefix) -> Option<u32>| -> Vec<PoolEntry> {
        pool.iter()
            .map(|(prefix, d, full)| PoolEntry::Detailed {
                prefix: *prefix,
                delegation: Some(d.clone()),
                customers: if *full { None } else { customers(prefix) },
            })
            .collect()
    };
    // first pass fixes the subnet counts, second thins out the customers
    let spec = SimSpec {
        seed,
        providers: vec![provider(entries(&|_| None), Delegation::Uniform64, None)],
    };
    let full = build_sim_network(&spec, seed).map_err(|e| e.to_string())?;
    let sizes: BTreeMap<Prefix, u64> = pool
        .iter()
        .map(|(p, _, _)| (*p, full.delegated_subnets(p).map_or(1, |s| s.len() as u64)))
        .collect();
    let draws: BTreeMap<Prefix, u32> = sizes.iter().map(|(p, n)| (*p, 1 + (rng.next_u64() % n) as u32)).collect();
    let spec = SimSpec {
        seed,
        providers: vec![provider(entries(&|p| draws.get(p).copied()), Delegation::Uniform64, None)],
    };
    let net = build_sim_network(&spec, seed).map_err(|e| e.to_string())?;
    let run = campaign(
        &net,
        CampaignConfig {
            eta1: 0,
            eta2: usize::MAX,
            rng_seed: seed,
            ..Default::default()
        },
    )?;
    let r1 = lasthops_by_prefix(&run.records, 56);
    let r2 = lasthops_by_prefix(&run.records, 60);
    let view = SweepView {
        prefixes: prefixes as usize,
        rows: eta_sweep(&r1, Some(&r2), etas, 4096),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate_prefix(delegation: &str, customers: u32, seed: u32, eta1: u32, eta2: u32) -> Result<String, JsValue> {
    simulate_prefix_json(delegation, customers, seed as u64, eta1 as usize, eta2 as usize).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn inspect_address(text: &str) -> Result<String, JsValue> {
    inspect_address_json(text).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn sweep_etas(seed: u32, prefixes: u32, etas: Vec<u32>) -> Result<String, JsValue> {
    let etas: Vec<usize> = etas.into_iter().map(|e| e as usize).collect();
    eta_sweep_json(seed as u64, prefixes, &etas).map_err(JsValue::from)
}
