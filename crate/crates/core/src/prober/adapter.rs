//! File-exchange backend for an external tracer.
//!
//! For a batch labelled `L` the adapter writes `L.targets` (one address per
//! line) into its exchange directory and expects the tracer to leave
//! `L.results.jsonl` next to it, in the seed-trace format.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ProbeBatch, ProbeError, Prober};
use crate::seed::{parse_trace_line, TraceResult};

pub fn adapter_write_targets(batch: &ProbeBatch, path: &Path) -> Result<(), ProbeError> {
    let io_err = |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for t in &batch.targets {
        writeln!(w, "{t}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Parses a results file. Unknown JSON fields are ignored.
pub fn adapter_read_results(path: &Path) -> Result<Vec<TraceResult>, ProbeError> {
    let file = File::open(path).map_err(|source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ProbeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let trace = parse_trace_line(&line, idx + 1).map_err(|source| ProbeError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(trace);
    }
    Ok(out)
}

/// Aligns results to targets. Targets without a result come back fully
/// anonymous; results for addresses not in the batch are dropped. When a
/// target appears more than once, results are matched in order.
fn align(batch: &ProbeBatch, results: Vec<TraceResult>) -> Vec<TraceResult> {
    let mut by_dst: HashMap<_, Vec<TraceResult>> = HashMap::new();
    for r in results.into_iter().rev() {
        by_dst.entry(r.dst).or_default().push(r);
    }
    batch
        .targets
        .iter()
        .map(|t| {
            by_dst
                .get_mut(t)
                .and_then(Vec::pop)
                .unwrap_or_else(|| TraceResult::anonymous(*t))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AdapterProber {
    dir: PathBuf,
    /// Total targets the adapter may emit without authorization.
    budget: Option<u64>,
    authorized: bool,
    emitted: u64,
}

impl AdapterProber {
    pub fn new(dir: impl Into<PathBuf>) -> AdapterProber {
        AdapterProber {
            dir: dir.into(),
            budget: None,
            authorized: false,
            emitted: 0,
        }
    }

    pub fn with_budget(mut self, budget: u64, authorized: bool) -> AdapterProber {
        self.budget = Some(budget);
        self.authorized = authorized;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn targets_path(&self, label: &str) -> PathBuf {
        self.dir.join(format!("{label}.targets"))
    }

    pub fn results_path(&self, label: &str) -> PathBuf {
        self.dir.join(format!("{label}.results.jsonl"))
    }
}

impl Prober for AdapterProber {
    fn probe(&mut self, batch: &ProbeBatch) -> Result<Vec<TraceResult>, ProbeError> {
        if batch.targets.is_empty() {
            return Err(ProbeError::EmptyBatch);
        }
        let targets = self.targets_path(&batch.label);
        let results = self.results_path(&batch.label);
        if results.exists() {
            let parsed = adapter_read_results(&results)?;
            return Ok(align(batch, parsed));
        }
        if !targets.exists() {
            let requested = self.emitted + batch.targets.len() as u64;
            if let Some(budget) = self.budget {
                if requested > budget && !self.authorized {
                    return Err(ProbeError::BudgetExceeded { requested, budget });
                }
            }
            fs::create_dir_all(&self.dir).map_err(|source| ProbeError::Io {
                path: self.dir.clone(),
                source,
            })?;
            adapter_write_targets(batch, &targets)?;
            self.emitted = requested;
            log::info!("wrote {} targets to {}", batch.targets.len(), targets.display());
        }
        Err(ProbeError::Pending { targets, results })
    }
}
