//! Round scheduler: probes candidate /48s at masks 56, 60, 62 and 64,
//! filters every response, and decides per prefix whether to go finer.
//!
//! Rounds are global: every active prefix finishes round `r` before any
//! prefix starts round `r + 1`. State is checkpointed after each
//! (prefix, round) pair. Last-hop sets live in the record stream; the
//! checkpoint keeps counts, decisions and the stream offset, and resuming
//! rebuilds the sets by replaying the stream.

mod config;
mod rules;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{AliasSet, Reason, ResponseFilter, TraceContext};
use crate::net::{Address128, AsnTable, Prefix};
use crate::prober::{ProbeBatch, ProbeError, Prober};
use crate::seed::CandidateSet;

pub use config::CampaignConfig;
pub use rules::{
    evaluate_round, generate_round_targets, probes_for_mask, probes_through, round_index, Decision,
    LastHopIndex, Thresholds, ETA3, ROUND_MASKS,
};

pub const FORMAT_VERSION: u32 = 1;
pub const STATE_FILE: &str = "state.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{0}")]
    Argument(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("probing {prefix} at /{mask}: {source}")]
    Probe {
        prefix: Prefix,
        mask: u8,
        #[source]
        source: ProbeError,
    },
    #[error("prober returned {got} results for {expected} targets")]
    Contract { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{0}")]
    Filter(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastHopRecord {
    pub target: Address128,
    pub target_prefix: Prefix,
    /// Mask of the round that produced the record.
    pub round: u8,
    pub lasthop: Address128,
    pub penultimate: Option<Address128>,
    pub hop_count: u32,
    pub recv_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "mask", rename_all = "snake_case")]
pub enum Status {
    Pending,
    /// Next round to probe.
    Active(u8),
    /// Stopped by a threshold after the given mask.
    Stopped(u8),
    /// Completed the /64 round.
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLog {
    pub mask: u8,
    pub probes: u64,
    pub responsive: u64,
    pub kept: u64,
    pub unique_lasthops: usize,
    pub rejected: BTreeMap<Reason, u64>,
    pub decision: Decision,
    /// Rebuilt from the record stream on resume.
    #[serde(skip)]
    pub lasthops: BTreeSet<Address128>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixState {
    pub t: u64,
    pub status: Status,
    pub probes: u64,
    pub rounds: Vec<RoundLog>,
}

impl PrefixState {
    fn next_mask(&self) -> Option<u8> {
        match self.status {
            Status::Pending => Some(ROUND_MASKS[0]),
            Status::Active(m) => Some(m),
            Status::Stopped(_) | Status::Exhausted => None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.next_mask().is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Running,
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incomplete {
    pub prefix: Prefix,
    pub mask: u8,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignState {
    pub format_version: u32,
    pub rng_seed: u64,
    pub config: CampaignConfig,
    pub phase: Phase,
    /// Index into `ROUND_MASKS` of the round in progress.
    pub round: usize,
    pub prefixes: BTreeMap<Prefix, PrefixState>,
    pub probes_sent: u64,
    pub clock_ms: u64,
    pub records_written: u64,
    pub records_bytes: u64,
    pub incomplete: Option<Incomplete>,
}

impl CampaignState {
    pub fn new(candidates: &CandidateSet, config: CampaignConfig) -> CampaignState {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let prefixes = candidates
            .prefixes()
            .map(|p| {
                let st = PrefixState {
                    t: rng.gen(),
                    status: Status::Pending,
                    probes: 0,
                    rounds: Vec::new(),
                };
                (*p, st)
            })
            .collect();
        CampaignState {
            format_version: FORMAT_VERSION,
            rng_seed: config.rng_seed,
            config,
            phase: Phase::Running,
            round: 0,
            prefixes,
            probes_sent: 0,
            clock_ms: 0,
            records_written: 0,
            records_bytes: 0,
            incomplete: None,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.phase == Phase::Exhausted
    }

    /// Prefixes that probed `mask` and got the given decision.
    pub fn decided(&self, mask: u8, decision: Decision) -> Vec<Prefix> {
        self.prefixes
            .iter()
            .filter(|(_, s)| s.rounds.iter().any(|r| r.mask == mask && r.decision == decision))
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<CampaignState, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn record_to_json(r: &LastHopRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}

pub fn write_records<W: Write>(mut w: W, records: &[LastHopRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", record_to_json(r))?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<LastHopRecord>, CampaignError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(Path::new("<records>")))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CampaignError::Checkpoint {
            path: "<records>".into(),
            message: format!("line {}: {e}", idx + 1),
        })?);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<LastHopRecord>, CampaignError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_records(BufReader::new(f)).map_err(|e| match e {
        CampaignError::Checkpoint { message, .. } => CampaignError::Checkpoint {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Builds the response filter from the alias and pfx2as files named in
/// the config; missing entries give an empty set or table.
pub fn build_filter(config: &CampaignConfig) -> Result<ResponseFilter, CampaignError> {
    let aliases = match &config.alias_file {
        Some(p) => {
            let f = File::open(p).map_err(io_err(p))?;
            AliasSet::load(BufReader::new(f)).map_err(|e| CampaignError::Filter(format!("{}: {e}", p.display())))?
        }
        None => AliasSet::new(),
    };
    let routable = match &config.pfx2as_file {
        Some(p) => {
            let f = File::open(p).map_err(io_err(p))?;
            AsnTable::load(BufReader::new(f)).map_err(|e| CampaignError::Filter(format!("{}: {e}", p.display())))?
        }
        None => AsnTable::new(),
    };
    Ok(ResponseFilter::new(aliases, routable, config.spoof_check))
}

struct Store {
    dir: PathBuf,
    records: BufWriter<File>,
}

impl Store {
    fn state_path(&self) -> PathBuf {
        self.dir.join(STATE_FILE)
    }

    fn checkpoint(&mut self, state: &CampaignState) -> Result<(), CampaignError> {
        let rec_path = self.dir.join(RECORDS_FILE);
        self.records.flush().map_err(io_err(&rec_path))?;
        self.records.get_ref().sync_data().map_err(io_err(&rec_path))?;
        let path = self.state_path();
        let tmp = self.dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, state.to_json() + "\n").map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

/// Outcome of [`Campaign::run_batches`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Finished,
    /// Stopped early after the requested number of batches.
    Paused,
}

pub struct Campaign {
    state: CampaignState,
    index: LastHopIndex,
    records: Vec<LastHopRecord>,
    store: Option<Store>,
}

/// Final state and every record, in emission order.
#[derive(Clone, Debug)]
pub struct CampaignRun {
    pub state: CampaignState,
    pub records: Vec<LastHopRecord>,
}

impl Campaign {
    /// Fresh campaign. With a `checkpoint_dir`, any previous state there is
    /// replaced.
    pub fn new(candidates: &CandidateSet, config: CampaignConfig) -> Result<Campaign, CampaignError> {
        config.validate()?;
        let state = CampaignState::new(candidates, config);
        let store = match &state.config.checkpoint_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let rec_path = dir.join(RECORDS_FILE);
                let f = File::create(&rec_path).map_err(io_err(&rec_path))?;
                Some(Store {
                    dir: dir.clone(),
                    records: BufWriter::new(f),
                })
            }
            None => None,
        };
        let mut c = Campaign {
            state,
            index: LastHopIndex::new(),
            records: Vec::new(),
            store,
        };
        c.checkpoint()?;
        Ok(c)
    }

    /// Reloads a checkpoint directory, dropping records written after the
    /// last checkpoint.
    pub fn resume(dir: &Path) -> Result<Campaign, CampaignError> {
        let state_path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
        let mut state = CampaignState::from_json(&text).map_err(|e| CampaignError::Checkpoint {
            path: state_path.clone(),
            message: e.to_string(),
        })?;
        if state.format_version != FORMAT_VERSION {
            return Err(CampaignError::Checkpoint {
                path: state_path,
                message: format!("format_version {} (expected {FORMAT_VERSION})", state.format_version),
            });
        }
        // the directory may have moved since the checkpoint was written
        state.config.checkpoint_dir = Some(dir.to_path_buf());
        let rec_path = dir.join(RECORDS_FILE);
        let f = OpenOptions::new().read(true).write(true).open(&rec_path).map_err(io_err(&rec_path))?;
        let len = f.metadata().map_err(io_err(&rec_path))?.len();
        if len < state.records_bytes {
            return Err(CampaignError::Checkpoint {
                path: rec_path,
                message: format!("{len} bytes on disk, checkpoint expects {}", state.records_bytes),
            });
        }
        f.set_len(state.records_bytes).map_err(io_err(&rec_path))?;
        let records = load_records(&rec_path)?;
        if records.len() as u64 != state.records_written {
            return Err(CampaignError::Checkpoint {
                path: rec_path,
                message: format!("{} records on disk, checkpoint expects {}", records.len(), state.records_written),
            });
        }
        let mut index = LastHopIndex::new();
        for r in &records {
            index.observe(r.lasthop, r.target);
            if let Some(ps) = state.prefixes.get_mut(&r.target_prefix) {
                if let Some(log) = ps.rounds.iter_mut().find(|l| l.mask == r.round) {
                    log.lasthops.insert(r.lasthop);
                }
            }
        }
        let append = OpenOptions::new().append(true).open(&rec_path).map_err(io_err(&rec_path))?;
        Ok(Campaign {
            state,
            index,
            records,
            store: Some(Store {
                dir: dir.to_path_buf(),
                records: BufWriter::new(append),
            }),
        })
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn records(&self) -> &[LastHopRecord] {
        &self.records
    }

    pub fn lasthop_index(&self) -> &LastHopIndex {
        &self.index
    }

    pub fn into_run(self) -> CampaignRun {
        CampaignRun {
            state: self.state,
            records: self.records,
        }
    }

    fn checkpoint(&mut self) -> Result<(), CampaignError> {
        match &mut self.store {
            Some(s) => s.checkpoint(&self.state),
            None => Ok(()),
        }
    }

    pub fn run<P: Prober + ?Sized>(&mut self, prober: &mut P, filter: &ResponseFilter) -> Result<(), CampaignError> {
        self.run_batches(prober, filter, None).map(|_| ())
    }

    /// Runs until done, or until `max_batches` more batches completed.
    pub fn run_batches<P: Prober + ?Sized>(
        &mut self,
        prober: &mut P,
        filter: &ResponseFilter,
        max_batches: Option<u64>,
    ) -> Result<RunOutcome, CampaignError> {
        let mut batches = 0u64;
        while self.state.round < ROUND_MASKS.len() {
            let mask = ROUND_MASKS[self.state.round];
            let due: Vec<Prefix> = self
                .state
                .prefixes
                .iter()
                .filter(|(_, s)| s.next_mask() == Some(mask))
                .map(|(p, _)| *p)
                .collect();
            if !due.is_empty() {
                prober.begin_round(self.state.round as u32);
            }
            for prefix in due {
                if max_batches.is_some_and(|m| batches >= m) {
                    return Ok(RunOutcome::Paused);
                }
                self.probe_prefix(prober, filter, prefix, mask)?;
                batches += 1;
            }
            self.state.round += 1;
            self.checkpoint()?;
        }
        if self.state.phase != Phase::Exhausted {
            self.state.phase = Phase::Exhausted;
            self.checkpoint()?;
        }
        Ok(RunOutcome::Finished)
    }

    fn probe_prefix<P: Prober + ?Sized>(
        &mut self,
        prober: &mut P,
        filter: &ResponseFilter,
        prefix: Prefix,
        mask: u8,
    ) -> Result<(), CampaignError> {
        let t = self.state.prefixes[&prefix].t;
        let targets = generate_round_targets(prefix, mask, t)?;
        let n = targets.len();
        let batch = ProbeBatch {
            targets,
            max_ttl: self.state.config.max_ttl,
            min_ttl: 1,
            rate_hint: self.state.config.max_pps,
            start_ms: self.state.clock_ms,
            label: format!("m{mask}-{:012x}", prefix.base().0 >> 80),
        };
        let results = match prober.probe(&batch) {
            Ok(r) => r,
            Err(source) => {
                self.state.prefixes.get_mut(&prefix).expect("known prefix").status = Status::Active(mask);
                self.state.incomplete = Some(Incomplete {
                    prefix,
                    mask,
                    error: source.to_string(),
                });
                // the records file is not touched, so this is still the
                // previous checkpoint plus the marker
                self.checkpoint()?;
                return Err(CampaignError::Probe { prefix, mask, source });
            }
        };
        if results.len() != n {
            return Err(CampaignError::Contract {
                expected: n,
                got: results.len(),
            });
        }

        let mut log = RoundLog {
            mask,
            probes: n as u64,
            responsive: 0,
            kept: 0,
            unique_lasthops: 0,
            rejected: BTreeMap::new(),
            decision: Decision::Stop,
            lasthops: BTreeSet::new(),
        };
        let mut filtered = BTreeMap::new();
        let mut new_records = Vec::new();
        for (i, (target, res)) in batch.targets.iter().zip(&results).enumerate() {
            let Some(idx) = res.last_responsive_index() else {
                continue;
            };
            let lasthop = res.hops[idx].expect("responsive");
            log.responsive += 1;
            let hop_count = idx as u32 + 1;
            let verdict = filter.classify(*target, lasthop, hop_count, TraceContext { hops: &res.hops });
            if !verdict.kept() {
                *log.rejected.entry(verdict.reason).or_insert(0) += 1;
                continue;
            }
            log.kept += 1;
            filtered.insert(*target, lasthop);
            log.lasthops.insert(lasthop);
            self.index.observe(lasthop, *target);
            new_records.push(LastHopRecord {
                target: *target,
                target_prefix: prefix,
                round: mask,
                lasthop,
                penultimate: res.penultimate_hop(),
                hop_count,
                recv_ms: res.recv_ms_at(idx).unwrap_or_else(|| batch.send_ms(i)),
            });
        }
        log.unique_lasthops = log.lasthops.len();
        log.decision = evaluate_round(prefix, mask, &filtered, &self.index, self.state.config.thresholds())?;
        log::debug!(
            "{prefix} /{mask}: {} unique last hops, {:?}",
            log.unique_lasthops,
            log.decision
        );

        if let Some(store) = &mut self.store {
            let rec_path = store.dir.join(RECORDS_FILE);
            for r in &new_records {
                let line = record_to_json(r);
                writeln!(store.records, "{line}").map_err(io_err(&rec_path))?;
                self.state.records_bytes += line.len() as u64 + 1;
            }
        }
        self.state.records_written += new_records.len() as u64;
        self.records.extend(new_records);

        let ps = self.state.prefixes.get_mut(&prefix).expect("known prefix");
        let round = round_index(mask)?;
        ps.status = match log.decision {
            Decision::Advance if round + 1 < ROUND_MASKS.len() => Status::Active(ROUND_MASKS[round + 1]),
            _ if mask == 64 => Status::Exhausted,
            _ => Status::Stopped(mask),
        };
        ps.probes += n as u64;
        ps.rounds.push(log);
        self.state.probes_sent += n as u64;
        // batches start on whole simulated seconds so rate windows never
        // straddle a checkpoint
        self.state.clock_ms = (self.state.clock_ms + batch.duration_ms()).div_ceil(1000) * 1000;
        self.state.incomplete = None;
        self.checkpoint()
    }
}

/// Runs a fresh campaign to completion.
pub fn run_campaign<P: Prober + ?Sized>(
    candidates: &CandidateSet,
    prober: &mut P,
    config: CampaignConfig,
    filter: &ResponseFilter,
) -> Result<CampaignRun, CampaignError> {
    let mut c = Campaign::new(candidates, config)?;
    c.run(prober, filter)?;
    Ok(c.into_run())
}
