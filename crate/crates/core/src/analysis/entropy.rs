use std::collections::BTreeMap;

use crate::net::Address128;

/// Shannon entropy of the 16 IID nybbles, normalized by 4 bits.
pub fn iid_entropy(addr: Address128) -> f64 {
    let iid = addr.iid().0;
    let mut counts = [0u32; 16];
    for k in 0..16 {
        counts[((iid >> (4 * k)) & 0xf) as usize] += 1;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / 16.0;
            p * (16.0 / c as f64).log2()
        })
        .sum();
    h / 4.0
}

/// Entropy value (rounded to 6 places) → number of addresses.
pub fn entropy_distribution<I: IntoIterator<Item = Address128>>(addrs: I) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for a in addrs {
        *out.entry(format!("{:.6}", iid_entropy(a))).or_insert(0) += 1;
    }
    out
}
