use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgy::analysis::{
    analyze, detect_boundary, emit_report, eta_sweep, lasthops_by_prefix, summary_json, AnalysisOptions,
    EdginessOptions, MacMode, DEFAULT_ETAS, DEFAULT_MAX_MASK,
};
use edgy::campaign::{
    build_filter, load_records, write_records, Campaign, CampaignConfig, CampaignError, RunOutcome,
};
use edgy::filter::AliasSet;
use edgy::net::{Address128, AsnTable};
use edgy::prober::{AdapterProber, ProbeError, Prober, SimNetwork, SimProber, SimSpec};
use edgy::seed::{discover_init, parse_seed_file, read_candidates, SeedError, Trace};
use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const EFFECTIVE_CONFIG: &str = "effective-config.json";

#[derive(Parser)]
#[command(name = "edgy", version, about = "IPv6 periphery router discovery")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Select candidate /48s from seed traces.
    Init(InitArgs),
    /// Run the multi-round campaign over a candidate list.
    Run(RunArgs),
    /// Compute metrics over last-hop records.
    Analyze(AnalyzeArgs),
    /// Threshold sweep over round-1 (and round-2) records.
    Sweep(SweepArgs),
    /// Find the granularity at which neighbors of an address share a last hop.
    Detect(DetectArgs),
    /// Validate a simulator spec and print its summary.
    SimspecCheck(SimspecArgs),
}

#[derive(Args)]
struct InitArgs {
    /// Seed traces, JSON Lines.
    seed: PathBuf,
    /// Candidate list (default stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Provenance JSON (default <out>.provenance.json when --out is given).
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Backend {
    Sim,
    Adapter,
}

#[derive(Args, Clone)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "sim")]
    backend: Backend,
    /// Simulator spec (sim backend).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed inside the simulator spec.
    #[arg(long)]
    sim_seed: Option<u64>,
    /// Exchange directory shared with the external prober (adapter backend).
    #[arg(long)]
    adapter_dir: Option<PathBuf>,
    /// Targets the adapter may emit without --i-have-authorization.
    #[arg(long, default_value_t = 100_000)]
    probe_budget: u64,
    #[arg(long)]
    i_have_authorization: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Candidate list, one /48 per line. Not needed with --resume.
    candidates: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// key=value config file; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eta1: Option<usize>,
    #[arg(long)]
    eta2: Option<usize>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    max_pps: Option<u32>,
    #[arg(long)]
    max_ttl: Option<u8>,
    #[arg(long)]
    alias_file: Option<PathBuf>,
    #[arg(long)]
    pfx2as_file: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    no_spoof_check: bool,
    /// Continue from the state in --checkpoint-dir.
    #[arg(long)]
    resume: bool,
    /// Record output (default stdout).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Where to write the effective configuration.
    #[arg(long)]
    effective_config: Option<PathBuf>,
    #[arg(long, hide = true)]
    stop_after_batches: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// LastHopRecord JSON Lines.
    records: PathBuf,
    /// Output directory for CSVs and summary.json.
    #[arg(short, long)]
    out: PathBuf,
    /// Full traces (seed format) for the periphery-only metric; their last
    /// hops are scored as records too.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    pfx2as: Option<PathBuf>,
    #[arg(long)]
    raw_macs: bool,
    /// Only score records from this round mask.
    #[arg(long)]
    round: Option<u8>,
    #[arg(long, value_delimiter = ',')]
    etas: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    suspect_targets: usize,
    #[arg(long, default_value_t = 1000)]
    window_ms: u64,
}

#[derive(Args)]
struct SweepArgs {
    records: PathBuf,
    #[arg(long, value_delimiter = ',')]
    etas: Vec<usize>,
    /// Probes per selected /48 in the priced round.
    #[arg(long, default_value_t = 4096)]
    probes_per_prefix: u64,
}

#[derive(Args)]
struct DetectArgs {
    dst: String,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_MASK)]
    max_mask: u8,
}

#[derive(Args)]
struct SimspecArgs {
    spec: PathBuf,
    #[arg(long)]
    sim_seed: Option<u64>,
}

/// Input errors exit 2, everything else 1.
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn campaign_failure(e: CampaignError) -> Failure {
    match e {
        CampaignError::Argument(_) | CampaignError::Config { .. } | CampaignError::Filter(_) => input(e),
        CampaignError::Probe {
            source: ProbeError::BudgetExceeded { .. },
            ..
        } => input(e),
        _ => runtime(e),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(input)
}

fn seed_failure(path: &Path, e: SeedError) -> Failure {
    input(anyhow!("{}: {e}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(runtime)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let body = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    fs::write(path, body)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn cmd_init(a: InitArgs) -> CmdResult {
    let traces = parse_seed_file(open(&a.seed)?).map_err(|e| seed_failure(&a.seed, e))?;
    let cands = discover_init(&traces);
    info!("{} traces, {} candidate /48s", traces.len(), cands.len());
    let mut out = output(a.out.as_deref())?;
    for p in cands.prefixes() {
        writeln!(out, "{p}").map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;

    let prov_path = a
        .provenance
        .or_else(|| a.out.as_ref().map(|o| PathBuf::from(format!("{}.provenance.json", o.display()))));
    if let Some(path) = prov_path {
        #[derive(Serialize)]
        struct Provenance<'a> {
            seed_file: &'a Path,
            traces: usize,
            anonymous_traces: usize,
            candidates: usize,
            lasthops: &'a std::collections::BTreeMap<edgy::net::Prefix, std::collections::BTreeSet<Address128>>,
        }
        write_json(
            &path,
            &Provenance {
                seed_file: &a.seed,
                traces: traces.len(),
                anonymous_traces: traces.iter().filter(|t| t.is_anonymous()).count(),
                candidates: cands.len(),
                lasthops: &cands.provenance,
            },
        )?;
    }
    Ok(())
}

fn sim_network(b: &BackendArgs) -> Result<SimNetwork, Failure> {
    let path = b
        .spec
        .as_ref()
        .ok_or_else(|| input(anyhow!("--spec is required with --backend sim")))?;
    let spec = SimSpec::from_reader(open(path)?).map_err(|e| input(anyhow!("{}: {e}", path.display())))?;
    let seed = b.sim_seed.unwrap_or(spec.seed);
    edgy::prober::build_sim_network(&spec, seed).map_err(|e| input(anyhow!("{}: {e}", path.display())))
}

fn make_prober(b: &BackendArgs) -> Result<Box<dyn Prober>, Failure> {
    Ok(match b.backend {
        Backend::Sim => Box::new(SimProber::new(sim_network(b)?)),
        Backend::Adapter => {
            let dir = b
                .adapter_dir
                .as_ref()
                .ok_or_else(|| input(anyhow!("--adapter-dir is required with --backend adapter")))?;
            Box::new(AdapterProber::new(dir).with_budget(b.probe_budget, b.i_have_authorization))
        }
    })
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    subcommand: &'static str,
    candidates: Option<&'a Path>,
    backend: Backend,
    spec: Option<&'a Path>,
    sim_seed: Option<u64>,
    adapter_dir: Option<&'a Path>,
    probe_budget: u64,
    authorized: bool,
    resumed: bool,
    records: Option<&'a Path>,
    campaign: &'a CampaignConfig,
}

fn run_config(a: &RunArgs) -> Result<CampaignConfig, Failure> {
    let mut c = CampaignConfig::default();
    if let Some(path) = &a.config {
        c.merge_file(open(path)?)
            .map_err(|e| input(anyhow!("{}: {e}", path.display())))?;
    }
    if let Some(v) = a.eta1 {
        c.eta1 = v;
    }
    if let Some(v) = a.eta2 {
        c.eta2 = v;
    }
    if let Some(v) = a.rng_seed {
        c.rng_seed = v;
    }
    if let Some(v) = a.max_pps {
        c.max_pps = v;
    }
    if let Some(v) = a.max_ttl {
        c.max_ttl = v;
    }
    if a.alias_file.is_some() {
        c.alias_file = a.alias_file.clone();
    }
    if a.pfx2as_file.is_some() {
        c.pfx2as_file = a.pfx2as_file.clone();
    }
    if a.checkpoint_dir.is_some() {
        c.checkpoint_dir = a.checkpoint_dir.clone();
    }
    if a.no_spoof_check {
        c.spoof_check = false;
    }
    c.validate().map_err(campaign_failure)?;
    Ok(c)
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let mut prober = make_prober(&a.backend)?;
    if a.backend.backend == Backend::Adapter && a.checkpoint_dir.is_none() {
        return Err(input(anyhow!("--checkpoint-dir is required with --backend adapter")));
    }
    let mut campaign = if a.resume {
        let dir = a
            .checkpoint_dir
            .as_ref()
            .ok_or_else(|| input(anyhow!("--resume needs --checkpoint-dir")))?;
        let c = Campaign::resume(dir).map_err(campaign_failure)?;
        info!("resumed at round {} with {} records", c.state().round, c.records().len());
        c
    } else {
        let path = a
            .candidates
            .as_ref()
            .ok_or_else(|| input(anyhow!("a candidate list is required unless --resume is given")))?;
        let cands = read_candidates(open(path)?).map_err(|e| seed_failure(path, e))?;
        Campaign::new(&cands, run_config(&a)?).map_err(campaign_failure)?
    };
    let config = campaign.state().config.clone();

    let eff_path = a.effective_config.clone().unwrap_or_else(|| {
        config
            .checkpoint_dir
            .clone()
            .or_else(|| a.records.as_ref().and_then(|r| r.parent().map(Path::to_path_buf)))
            .unwrap_or_default()
            .join(EFFECTIVE_CONFIG)
    });
    write_json(
        &eff_path,
        &EffectiveConfig {
            subcommand: "run",
            candidates: a.candidates.as_deref(),
            backend: a.backend.backend,
            spec: a.backend.spec.as_deref(),
            sim_seed: a.backend.sim_seed,
            adapter_dir: a.backend.adapter_dir.as_deref(),
            probe_budget: a.backend.probe_budget,
            authorized: a.backend.i_have_authorization,
            resumed: a.resume,
            records: a.records.as_deref(),
            campaign: &config,
        },
    )?;

    let mut filter = build_filter(&config).map_err(campaign_failure)?;
    // the simulator knows its own routing table and aliased space
    if a.backend.backend == Backend::Sim {
        let net = sim_network(&a.backend)?;
        if config.pfx2as_file.is_none() {
            filter.routable = net.asn_table();
        }
        if config.alias_file.is_none() {
            filter.aliases = AliasSet::from_prefixes(net.alias_prefixes());
        }
    }

    match campaign.run_batches(prober.as_mut(), &filter, a.stop_after_batches) {
        Ok(RunOutcome::Finished) => {}
        Ok(RunOutcome::Paused) => {
            warn!("paused after {} batches; continue with --resume", a.stop_after_batches.unwrap_or(0));
            return Ok(());
        }
        Err(CampaignError::Probe {
            source: source @ ProbeError::Pending { .. },
            ..
        }) => {
            warn!("{source}; continue with --resume once the results exist");
            return Ok(());
        }
        Err(e) => return Err(campaign_failure(e)),
    }

    let state = campaign.state();
    info!(
        "{} probes, {} records, {} prefixes",
        state.probes_sent,
        state.records_written,
        state.prefixes.len()
    );
    let mut out = output(a.records.as_deref())?;
    write_records(&mut out, campaign.records()).map_err(runtime)?;
    out.flush().map_err(runtime)
}

fn read_traces(path: &Path) -> Result<Vec<Trace>, Failure> {
    parse_seed_file(open(path)?).map_err(|e| seed_failure(path, e))
}

fn records_input(path: &Path) -> Result<Vec<edgy::campaign::LastHopRecord>, Failure> {
    load_records(path).map_err(|e| input(anyhow!("{}: {e}", path.display())))
}

fn cmd_analyze(a: AnalyzeArgs) -> CmdResult {
    let mut records = records_input(&a.records)?;
    let traces = match &a.traces {
        Some(p) => read_traces(p)?,
        None => Vec::new(),
    };
    records.extend(edgy::analysis::records_from_traces(&traces));
    let asn = match &a.pfx2as {
        Some(p) => AsnTable::load(open(p)?).map_err(|e| input(anyhow!("{}: {e}", p.display())))?,
        None => AsnTable::new(),
    };
    let opts = AnalysisOptions {
        mac_mode: if a.raw_macs { MacMode::Raw } else { MacMode::Normalized },
        edginess: EdginessOptions {
            suspect_targets: a.suspect_targets,
            window_ms: a.window_ms,
        },
        round: a.round,
        etas: a.etas.clone(),
    };
    let report = analyze(&records, &traces, &asn, &opts);
    let written = emit_report(&report, &a.out).map_err(runtime)?;
    for p in &written {
        info!("wrote {}", p.display());
    }

    #[derive(Serialize)]
    struct Effective<'a> {
        subcommand: &'static str,
        records: &'a Path,
        traces: Option<&'a Path>,
        pfx2as: Option<&'a Path>,
        mac_mode: MacMode,
        round: Option<u8>,
        etas: &'a [usize],
        edginess: EdginessOptions,
    }
    write_json(
        &a.out.join(EFFECTIVE_CONFIG),
        &Effective {
            subcommand: "analyze",
            records: &a.records,
            traces: a.traces.as_deref(),
            pfx2as: a.pfx2as.as_deref(),
            mac_mode: opts.mac_mode,
            round: opts.round,
            etas: &opts.etas,
            edginess: opts.edginess,
        },
    )?;
    let mut out = io::stdout().lock();
    out.write_all(summary_json(&report).as_bytes()).map_err(runtime)
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let records = records_input(&a.records)?;
    let r1 = lasthops_by_prefix(&records, 56);
    let r2 = lasthops_by_prefix(&records, 60);
    let etas = if a.etas.is_empty() { DEFAULT_ETAS.to_vec() } else { a.etas };
    let rows = eta_sweep(&r1, (!r2.is_empty()).then_some(&r2), &etas, a.probes_per_prefix);
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "eta,selected_prefixes,unique_lasthops,probes,probes_per_lasthop,projected").map_err(runtime)?;
    for r in rows {
        let ppl = r.probes_per_lasthop.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.eta, r.selected_prefixes, r.unique_lasthops, r.probes, ppl, r.projected
        )
        .map_err(runtime)?;
    }
    out.flush().map_err(runtime)
}

fn cmd_detect(a: DetectArgs) -> CmdResult {
    let dst: Address128 = a
        .dst
        .parse()
        .map_err(|e| input(anyhow!("{}: {e}", a.dst)))?;
    let mut prober = make_prober(&a.backend)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.rng_seed);
    let d = match detect_boundary(prober.as_mut(), dst, a.max_mask, &mut rng) {
        Ok(d) => d,
        Err(edgy::analysis::DetectError::MaxMask(m)) => return Err(input(anyhow!("--max-mask {m} outside 64..=128"))),
        Err(e) => return Err(runtime(e)),
    };
    if d.capped {
        warn!("neighbors still disagree at /{}", d.mask);
    }
    println!("{}", d.mask);
    Ok(())
}

fn cmd_simspec_check(a: SimspecArgs) -> CmdResult {
    let b = BackendArgs {
        backend: Backend::Sim,
        spec: Some(a.spec),
        sim_seed: a.sim_seed,
        adapter_dir: None,
        probe_budget: 0,
        i_have_authorization: false,
    };
    let net = sim_network(&b)?;
    println!("{}", serde_json::to_string_pretty(&net.summary()).map_err(runtime)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.cmd {
        Cmd::Init(a) => cmd_init(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Detect(a) => cmd_detect(a),
        Cmd::SimspecCheck(a) => cmd_simspec_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("edgy: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("edgy: {e:#}");
            ExitCode::from(1)
        }
    }
}
