use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Address128;
use crate::prober::{ProbeBatch, ProbeError, Prober};

pub const DEFAULT_MAX_MASK: u8 = 96;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub mask: u8,
    /// The loop hit `max_mask` with neighbors still disagreeing.
    pub capped: bool,
    pub iterations: u32,
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("max_mask must be within 64..=128, got {0}")]
    MaxMask(u8),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Starting at /64, probes the neighbors `net - 2^(128-mask) + t` and
/// `net + 2^(128-mask) + t` (fresh `t` each time) and refines the mask
/// while they answer from more than one last hop. Returns the mask of the
/// iteration at which they stopped disagreeing.
pub fn detect_boundary<P: Prober + ?Sized, R: RngCore + ?Sized>(
    prober: &mut P,
    dst: Address128,
    max_mask: u8,
    rng: &mut R,
) -> Result<Detection, DetectError> {
    if !(64..=128).contains(&max_mask) {
        return Err(DetectError::MaxMask(max_mask));
    }
    let mut mask = 64u8;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let t = rng.next_u64() as u128;
        let net = dst.0 & (u128::MAX.checked_shl(128 - mask as u32).unwrap_or(0));
        let step = 1u128.checked_shl(128 - mask as u32).unwrap_or(0);
        let mut batch = ProbeBatch::new(vec![
            Address128(net.wrapping_sub(step).wrapping_add(t)),
            Address128(net.wrapping_add(step).wrapping_add(t)),
        ]);
        batch.label = format!("detect-{mask}");
        let lh: BTreeSet<Address128> = prober
            .probe(&batch)?
            .iter()
            .filter_map(|r| r.last_responsive_hop())
            .collect();
        log::debug!("detect {dst} /{mask}: {} last hops", lh.len());
        if lh.len() <= 1 {
            return Ok(Detection {
                mask,
                capped: false,
                iterations,
            });
        }
        if mask >= max_mask {
            return Ok(Detection {
                mask: max_mask,
                capped: true,
                iterations,
            });
        }
        mask += 1;
    }
}
