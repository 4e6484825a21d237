//! Probe contract and its two backends.

mod adapter;
mod sim;

use std::path::PathBuf;

use thiserror::Error;

use crate::net::Address128;
use crate::seed::{SeedError, TraceResult};

pub use adapter::{adapter_read_results, adapter_write_targets, AdapterProber};
pub use sim::{
    build_sim_network, Delegation, IidStyle, PoolEntry, ProviderSpec, Rotation, SimNetwork,
    SimProber, SimSpec, SimSpecError, SimSummary, Vacant,
};

/// One batch of hop-limited traces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeBatch {
    pub targets: Vec<Address128>,
    pub max_ttl: u8,
    pub min_ttl: u8,
    /// Advisory probes per second.
    pub rate_hint: u32,
    /// Simulated send time of the first probe.
    pub start_ms: u64,
    /// Stable name, used by file-exchange backends.
    pub label: String,
}

impl ProbeBatch {
    pub fn new(targets: Vec<Address128>) -> ProbeBatch {
        ProbeBatch {
            targets,
            max_ttl: 32,
            min_ttl: 1,
            rate_hint: 10_000,
            start_ms: 0,
            label: "batch".into(),
        }
    }

    /// Simulated duration of the batch at `rate_hint`.
    pub fn duration_ms(&self) -> u64 {
        let rate = self.rate_hint.max(1) as u64;
        (self.targets.len() as u64 * 1000).div_ceil(rate)
    }

    pub fn send_ms(&self, index: usize) -> u64 {
        self.start_ms + (index as u64 * 1000) / self.rate_hint.max(1) as u64
    }
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe backend unavailable: {0}")]
    Unavailable(String),
    #[error("waiting for external results: targets in {targets}, expecting {results}")]
    Pending { targets: PathBuf, results: PathBuf },
    #[error("probe budget exceeded: {requested} targets requested, budget {budget} (pass the authorization flag to override)")]
    BudgetExceeded { requested: u64, budget: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: SeedError,
    },
    #[error("empty probe batch")]
    EmptyBatch,
}

impl ProbeError {
    /// Whether re-running the same batch later may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProbeError::Unavailable(_) | ProbeError::Pending { .. } | ProbeError::Io { .. })
    }
}

/// `probe` returns one result per target, aligned with the input order.
pub trait Prober {
    fn probe(&mut self, batch: &ProbeBatch) -> Result<Vec<TraceResult>, ProbeError>;

    /// Called by the campaign before each round (0-based).
    fn begin_round(&mut self, _round_index: u32) {}
}

impl<P: Prober + ?Sized> Prober for &mut P {
    fn probe(&mut self, batch: &ProbeBatch) -> Result<Vec<TraceResult>, ProbeError> {
        (**self).probe(batch)
    }

    fn begin_round(&mut self, round_index: u32) {
        (**self).begin_round(round_index)
    }
}

impl<P: Prober + ?Sized> Prober for Box<P> {
    fn probe(&mut self, batch: &ProbeBatch) -> Result<Vec<TraceResult>, ProbeError> {
        (**self).probe(batch)
    }

    fn begin_round(&mut self, round_index: u32) {
        (**self).begin_round(round_index)
    }
}
