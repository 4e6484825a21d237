use edgy_web::{eta_sweep_json, inspect_address_json, simulate_prefix_json};
use serde_json::Value;

#[test]
fn uniform56_prefix_stops_after_60() {
    let v: Value = serde_json::from_str(&simulate_prefix_json("\"uniform56\"", 0, 1, 16, 256).unwrap()).unwrap();
    assert_eq!(v["status"]["status"], "stopped");
    assert_eq!(v["status"]["mask"], 60);
    assert_eq!(v["rounds"][0]["unique_lasthops"], 256);
    assert_eq!(v["discovered"], 256);
    let grid = v["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 256);
    assert!(grid.iter().all(|c| c["len"] == 56));
}

#[test]
fn bad_delegation_is_an_error() {
    assert!(simulate_prefix_json("\"uniform57\"", 0, 1, 16, 256).is_err());
    assert!(simulate_prefix_json("{", 0, 1, 16, 256).is_err());
}

#[test]
fn inspect_reads_eui64() {
    let v: Value = serde_json::from_str(&inspect_address_json("2a03:4980:2b6:9624:211:22ff:fe33:4455").unwrap()).unwrap();
    assert_eq!(v["eui64_mac"], "00:11:22:33:44:55");
    assert_eq!(v["prefix48"], "2a03:4980:2b6::/48");
    assert_eq!(v["subnet64"], "2a03:4980:2b6:9624::/64");
    assert!(inspect_address_json("2001:db8::g").is_err());
}

#[test]
fn sweep_selection_shrinks_with_eta() {
    let v: Value = serde_json::from_str(&eta_sweep_json(3, 8, &[4, 16, 64, 256]).unwrap()).unwrap();
    let sel: Vec<u64> = v["rows"].as_array().unwrap().iter().map(|r| r["selected_prefixes"].as_u64().unwrap()).collect();
    assert!(sel.windows(2).all(|w| w[0] >= w[1]), "{sel:?}");
    assert!(eta_sweep_json(3, 0, &[4]).is_err());
}
