// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! The `bridgetrace` command line.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 external source
//! failure, 3 partial ingestion, 4 evaluation gate failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bridgetrace_core::analytics::{
    collection_graph, flow_series, long_latency_report, match_rate_rows, render_match_rate_table,
    retain_exact, samples_from_records, tally_records, time_cost_series, token_composition, Statistic,
    DEFAULT_SPIKE_FACTOR,
};
use bridgetrace_core::decode::{decode_log_in_tx, explode_batch, RawLog, RawTransaction};
use bridgetrace_core::matching::{match_all, MatchConfig, MatchRecord, OutcomeCounts};
use bridgetrace_core::pool::{exit_pool, extract_depositor_set, ExitRecord};
use bridgetrace_core::sim::{generate, metric_string, score, GroundTruth, LatencyModel, TrafficScenario, TruthRecord};
use bridgetrace_core::spec::{default_polygon_pos_spec, BridgeSpec};
use bridgetrace_core::tuning::{
    default_grid, find_peak, group_by_token, sample_events, sweep, SweepCurve, DEFAULT_SAMPLE_SIZE,
};
use bridgetrace_core::{AccountAddress, AssetClass, BridgeEvent, ChainTransfer, Direction, Timestamp, TxId};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::load_spec;
use crate::ingest::{
    bridge_addresses, bridge_and_token_addresses, dedup_transfers, CheckpointDir, IngestError, IngestSource,
    Ingestor, SystemClock, TransferWindow,
};
use crate::manifest::RunManifest;
use crate::reports;
use crate::store::{self, DatasetLayout, DatasetName, Schema, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOURCE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_GATE: i32 = 4;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Source(String),
    Partial(String),
    Gate(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Source(_) => EXIT_SOURCE,
            Failure::Partial(_) => EXIT_PARTIAL,
            Failure::Gate(_) => EXIT_GATE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Source(m) | Failure::Partial(m) | Failure::Gate(m) => m,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Range { .. } | IngestError::Address { .. } => Failure::Source(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

type Outcome = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "bridgetrace", version, about = "Trace cross-chain bridge transactions between EVM chains")]
struct Cli {
    /// Bridge spec file; the built-in Polygon PoS spec when omitted.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch bridge logs over a block range, or transfer histories of addresses.
    Ingest(IngestArgs),
    /// Match bridge events with counterpart transfers.
    Match(MatchArgs),
    /// Sweep the time tolerance and report the exact-match peak.
    Tune(TuneArgs),
    /// Derive analytics tables from match results.
    Report(ReportArgs),
    /// Generate synthetic traffic with ground truth.
    Simulate(SimulateArgs),
    /// Score match results against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Source description (TOML).
    #[arg(long)]
    source: PathBuf,
    /// Dataset root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    from_block: Option<u64>,
    #[arg(long)]
    to_block: Option<u64>,
    /// One address per line; switches to transfer-history mode.
    #[arg(long)]
    addresses_file: Option<PathBuf>,
    /// Event files whose deposit receivers are fetched; switches to
    /// transfer-history mode.
    #[arg(long)]
    depositors_from: Vec<PathBuf>,
    /// Asset families to fetch in transfer-history mode.
    #[arg(long, value_parser = parse_class)]
    class: Vec<AssetClass>,
    /// Direction label of the transfer files written in history mode.
    #[arg(long, default_value = "deposit", value_parser = parse_direction)]
    direction: Direction,
    /// Raw transactions used to corroborate fungible exits.
    #[arg(long)]
    raw_txs: Vec<PathBuf>,
    /// Also scan the spec's token contracts for exit transfers.
    #[arg(long)]
    token_contracts: bool,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long, required = true)]
    events: Vec<PathBuf>,
    #[arg(long)]
    transfers: Vec<PathBuf>,
    /// Seconds; s/m/h/d suffixes accepted.
    #[arg(long, value_parser = parse_seconds)]
    tolerance: u64,
    #[arg(long, value_parser = parse_direction)]
    direction: Direction,
    #[arg(long)]
    exclusive: bool,
    #[arg(long)]
    symmetric_window: bool,
    #[arg(long)]
    strict_gap: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long, required = true)]
    events: Vec<PathBuf>,
    #[arg(long)]
    transfers: Vec<PathBuf>,
    #[arg(long, value_parser = parse_direction)]
    direction: Direction,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    sample_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated tolerances; s/m/h/d suffixes accepted.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    /// One curve per token class instead of one pooled curve.
    #[arg(long)]
    per_token: bool,
    #[arg(long)]
    exclusive: bool,
    #[arg(long)]
    symmetric_window: bool,
    #[arg(long)]
    strict_gap: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Grid(Vec<u64>);

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    results: Vec<PathBuf>,
    #[arg(long)]
    events: Vec<PathBuf>,
    #[arg(long)]
    transfers: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Daily time cost of exact matches.
    #[arg(long)]
    time_cost: bool,
    #[arg(long, default_value = "median", value_parser = parse_statistic)]
    statistic: Statistic,
    /// Daily deposit and withdrawal counts.
    #[arg(long)]
    flows: bool,
    /// Count only exactly matched events in flows and composition.
    #[arg(long)]
    exact_only: bool,
    #[arg(long, default_value_t = DEFAULT_SPIKE_FACTOR)]
    spike_factor: f64,
    /// Event counts per token.
    #[arg(long)]
    composition: bool,
    /// Match rate per asset type and direction.
    #[arg(long)]
    match_table: bool,
    /// Transfer graph of one token.
    #[arg(long)]
    graph: Vec<String>,
    /// Threshold in seconds; s/m/h/d suffixes accepted.
    #[arg(long, value_parser = parse_seconds)]
    long_latency: Option<u64>,
    /// Reference time (Unix seconds) for unclaimed withdrawals; defaults to
    /// the latest timestamp in the inputs.
    #[arg(long)]
    as_of: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Named scenario: s0, s2, s3.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Scenario file (TOML or JSON).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    collision_rate: Option<f64>,
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    address_pool: Option<usize>,
    /// uniform:LO:HI, point:SECONDS, or lognormal:MU:SIGMA.
    #[arg(long, value_parser = parse_latency)]
    latency: Option<LatencyModel>,
    #[arg(long, default_value = "deposit", value_parser = parse_direction)]
    direction: Direction,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    results: Vec<PathBuf>,
    #[arg(long)]
    truth: Vec<PathBuf>,
    #[arg(long)]
    min_precision: Option<f64>,
    #[arg(long)]
    min_recall: Option<f64>,
}

// ---------------------------------------------------------------- parsers

/// Whole seconds from `N`, `Ns`, `Nm`, `Nh` or `Nd`, where N may carry a
/// decimal fraction as long as the result is a whole, positive second count:
/// `24.2m` is 1452.
pub fn parse_seconds(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let (number, unit) = match t.char_indices().last() {
        Some((i, c @ ('s' | 'm' | 'h' | 'd'))) => (&t[..i], c),
        _ => (t, 's'),
    };
    let multiplier: u128 = match unit {
        's' => 1,
        'm' => 60,
        'h' => 3_600,
        _ => 86_400,
    };
    let (whole, frac) = number.split_once('.').unwrap_or((number, ""));
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if (whole.is_empty() && frac.is_empty()) || !digits(whole) || !digits(frac) || frac.len() > 18 {
        return Err(format!("{text:?} is not a duration"));
    }
    let scale = 10u128.pow(frac.len() as u32);
    let parse = |s: &str| if s.is_empty() { Ok(0) } else { s.parse::<u128>() };
    let whole = parse(whole).map_err(|_| format!("{text:?} is too large"))?;
    let frac = parse(frac).map_err(|_| format!("{text:?} is too large"))?;
    let scaled = whole
        .checked_mul(scale)
        .and_then(|w| w.checked_add(frac))
        .and_then(|v| v.checked_mul(multiplier))
        .ok_or_else(|| format!("{text:?} is too large"))?;
    if scaled % scale != 0 {
        return Err(format!("{text:?} is not a whole number of seconds"));
    }
    let seconds = u64::try_from(scaled / scale).map_err(|_| format!("{text:?} is too large"))?;
    if seconds == 0 {
        return Err("tolerance must be greater than zero".into());
    }
    Ok(seconds)
}

fn parse_grid(text: &str) -> Result<Grid, String> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_seconds)
        .collect::<Result<Vec<_>, _>>()
        .map(Grid)
}

fn parse_direction(text: &str) -> Result<Direction, String> {
    text.parse().map_err(|e| format!("{e}"))
}

fn parse_class(text: &str) -> Result<AssetClass, String> {
    text.parse().map_err(|e| format!("{e}"))
}

fn parse_statistic(text: &str) -> Result<Statistic, String> {
    text.parse().map_err(|e| format!("{e}"))
}

fn parse_latency(text: &str) -> Result<LatencyModel, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let int = |s: &str| s.parse::<u64>().map_err(|_| format!("bad latency value {s:?}"));
    let float = |s: &str| s.parse::<f64>().map_err(|_| format!("bad latency value {s:?}"));
    match parts.as_slice() {
        ["uniform", lo, hi] => Ok(LatencyModel::Uniform { lo: int(lo)?, hi: int(hi)? }),
        ["point", v] => Ok(LatencyModel::PointMass { value: int(v)? }),
        ["lognormal", mu, sigma] => Ok(LatencyModel::LogNormal {
            mu: float(mu)?,
            sigma: float(sigma)?,
        }),
        _ => Err(format!("{text:?}: expected uniform:LO:HI, point:SECONDS or lognormal:MU:SIGMA")),
    }
}

// ---------------------------------------------------------------- entry

/// Runs one command line; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

struct Ctx {
    spec: BridgeSpec,
    spec_path: Option<PathBuf>,
    jobs: Option<usize>,
}

impl Ctx {
    fn manifest(&self, command: &str) -> Result<RunManifest, Failure> {
        let mut m = RunManifest::begin(command, self.spec_path.as_deref(), self.spec.version());
        if let Some(p) = &self.spec_path {
            m.input(p)?;
        }
        Ok(m)
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    let spec = match &cli.spec {
        Some(p) => load_spec(p).map_err(usage)?,
        None => default_polygon_pos_spec(),
    };
    if cli.jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be positive".into()));
    }
    let ctx = Ctx {
        spec,
        spec_path: cli.spec,
        jobs: cli.jobs,
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a, out),
        Command::Match(a) => cmd_match(&ctx, a, out),
        Command::Tune(a) => cmd_tune(&ctx, a, out),
        Command::Report(a) => cmd_report(&ctx, a, out),
        Command::Simulate(a) => cmd_simulate(&ctx, a, out),
        Command::Eval(a) => cmd_eval(a, out),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) {
    let _ = out.write_fmt(text);
    let _ = out.write_all(b"\n");
}

fn read_inputs<R: store::Record>(paths: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<R>, Failure> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(store::read_validated::<R>(p)?);
        manifest.input(p)?;
    }
    Ok(all)
}

fn write_data<R: store::Record>(
    layout: &DatasetLayout,
    name: &DatasetName,
    records: &[R],
    manifest: &mut RunManifest,
) -> Result<PathBuf, Failure> {
    let path = layout.data_path(name, R::SCHEMA);
    let digest = store::write_atomic(&path, records)?;
    manifest.output(layout.root(), &path, digest);
    Ok(path)
}

fn write_report(layout: &DatasetLayout, file: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<PathBuf, Failure> {
    let path = layout.report_path(file);
    let digest = store::write_bytes_atomic(&path, bytes)?;
    manifest.output(layout.root(), &path, digest);
    Ok(path)
}

fn open_layout(root: &Path) -> Result<DatasetLayout, Failure> {
    let layout = DatasetLayout::new(root);
    layout.create()?;
    Ok(layout)
}

fn chain_of(events: &[BridgeEvent], fallback: &str) -> String {
    events
        .first()
        .map(|e| e.chain.as_str().to_string())
        .unwrap_or_else(|| fallback.to_string())
}

fn file_token(symbol: &str) -> String {
    symbol
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

// ---------------------------------------------------------------- ingest

fn cmd_ingest(ctx: &Ctx, a: IngestArgs, out: &mut dyn Write) -> Outcome {
    if let (Some(from), Some(to)) = (a.from_block, a.to_block) {
        if from > to {
            return Err(Failure::Usage(format!("block range {from}..{to} is inverted")));
        }
    }
    let mut source = IngestSource::load(&a.source)?;
    if let Some(jobs) = ctx.jobs {
        source.settings.jobs = jobs;
    }
    let mut manifest = ctx.manifest("ingest")?;
    manifest.input(&a.source)?;
    let layout = open_layout(&a.out)?;
    if a.addresses_file.is_some() || !a.depositors_from.is_empty() {
        ingest_addresses(ctx, &a, &source, &layout, manifest, out)
    } else {
        let (Some(from), Some(to)) = (a.from_block, a.to_block) else {
            return Err(Failure::Usage(
                "ingest needs --from-block and --to-block, or --addresses-file / --depositors-from".into(),
            ));
        };
        ingest_logs(ctx, &a, &source, &layout, (from, to), manifest, out)
    }
}

fn ingest_logs(
    ctx: &Ctx,
    a: &IngestArgs,
    source: &IngestSource,
    layout: &DatasetLayout,
    (from, to): (u64, u64),
    mut manifest: RunManifest,
    out: &mut dyn Write,
) -> Outcome {
    let spec = &ctx.spec;
    let provider = source.log_provider()?;
    let ingestor = Ingestor::new(source.settings, Arc::new(SystemClock::new()))?;
    let addresses = if a.token_contracts {
        bridge_and_token_addresses(spec)
    } else {
        bridge_addresses(spec)
    };
    manifest
        .param("mode", "logs")
        .param("fromBlock", from)
        .param("toBlock", to)
        .param("tokenContracts", a.token_contracts);
    let txs: Vec<RawTransaction> = read_inputs(&a.raw_txs, &mut manifest)?;
    let txs: BTreeMap<TxId, RawTransaction> = txs.into_iter().map(|t| (t.tx_id, t)).collect();

    let checkpoint_dir = layout.dir(store::DatasetDir::Raw).join(format!("scan-{from}_{to}"));
    let mut sink = CheckpointDir::open(&checkpoint_dir)?;
    let scanned = ingestor.scan_bridge_logs(provider.as_ref(), &addresses, from, to, &mut sink);
    manifest.retries = ingestor.retries();
    if let Err(e) = scanned {
        let failure = Failure::from(e);
        manifest.param("checkpoint", sink.checkpoint_path().display().to_string());
        manifest.finish(&layout.manifest_path("ingest"))?;
        return Err(failure);
    }
    let logs: Vec<RawLog> = sink.logs()?;

    let mut deposits = Vec::new();
    let mut exits = Vec::new();
    let mut decode_errors = 0u64;
    for log in &logs {
        match decode_log_in_tx(log, txs.get(&log.tx_id), spec) {
            Ok(Some(event)) => {
                for e in explode_batch(event) {
                    match e.direction {
                        Direction::Deposit => deposits.push(e),
                        Direction::Withdrawal => exits.push(e),
                    }
                }
            }
            Ok(None) => {}
            Err(_) => decode_errors += 1,
        }
    }
    let exit_pool = exit_pool(
        exits
            .into_iter()
            .map(|e| {
                let tx = txs.get(&e.tx_id);
                ExitRecord::new(e, tx, spec)
            })
            .collect(),
        spec,
    );
    let chain = spec.source_chain().as_str();
    write_data(layout, &DatasetName::new(chain, "all", "all", (from, to)), &logs, &mut manifest)?;
    write_data(layout, &DatasetName::new(chain, "deposit", "all", (from, to)), &deposits, &mut manifest)?;
    write_data(layout, &DatasetName::new(chain, "withdrawal", "all", (from, to)), &exit_pool, &mut manifest)?;
    manifest.param("decodeErrors", decode_errors);
    manifest.finish(&layout.manifest_path("ingest"))?;
    say(
        out,
        format_args!(
            "logs: {} deposits: {} exits: {} decode errors: {} retries: {}",
            logs.len(),
            deposits.len(),
            exit_pool.len(),
            decode_errors,
            ingestor.retries()
        ),
    );
    Ok(())
}

fn read_address_file(path: &Path) -> Result<Vec<AccountAddress>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|e| Failure::Usage(format!("{}: line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn ingest_addresses(
    ctx: &Ctx,
    a: &IngestArgs,
    source: &IngestSource,
    layout: &DatasetLayout,
    mut manifest: RunManifest,
    out: &mut dyn Write,
) -> Outcome {
    let mut addresses = Vec::new();
    if let Some(p) = &a.addresses_file {
        addresses.extend(read_address_file(p)?);
        manifest.input(p)?;
    }
    let depositor_events: Vec<BridgeEvent> = read_inputs(&a.depositors_from, &mut manifest)?;
    addresses.extend(extract_depositor_set(&depositor_events));
    addresses.sort();
    addresses.dedup();

    let window = TransferWindow {
        start_block: a.from_block.unwrap_or(0),
        end_block: a.to_block.unwrap_or(u64::MAX),
    };
    let classes = if a.class.is_empty() {
        vec![AssetClass::Fungible, AssetClass::NonFungible]
    } else {
        let mut c: Vec<AssetClass> = a.class.iter().map(|c| c.match_family()).collect();
        c.sort();
        c.dedup();
        c
    };
    manifest
        .param("mode", "addresses")
        .param("addresses", addresses.len())
        .param("classes", classes.iter().map(|c| c.as_str()).collect::<Vec<_>>())
        .param("fromBlock", window.start_block)
        .param("toBlock", a.to_block);

    let provider = source.transfer_provider()?;
    let ingestor = Ingestor::new(source.settings, Arc::new(SystemClock::new()))?;
    let chain = source
        .chain
        .clone()
        .unwrap_or_else(|| ctx.spec.destination_chain().as_str().to_string());
    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    let mut truncated: Vec<String> = Vec::new();
    let mut fetched_any = false;
    for class in &classes {
        let dir = layout
            .dir(store::DatasetDir::Raw)
            .join(format!("histories-{}-{}", a.direction, class.as_str()));
        let mut sink = CheckpointDir::open(&dir)?;
        let outcome = ingestor.fetch_many(provider.as_ref(), &addresses, *class, window, &mut sink)?;
        fetched_any |= outcome.fetched + outcome.skipped > 0;
        for (addr, reason) in outcome.failures {
            failures.insert(format!("{addr} ({})", class.as_str()), reason);
        }
        let histories = sink.histories()?;
        truncated.extend(
            histories
                .iter()
                .filter(|(addr, h)| h.truncated && addresses.binary_search(addr).is_ok())
                .map(|(addr, _)| format!("{addr} ({})", class.as_str())),
        );
        let rows: Vec<ChainTransfer> = dedup_transfers(
            histories
                .into_iter()
                .filter(|(addr, _)| addresses.binary_search(addr).is_ok())
                .flat_map(|(_, h)| h.transfers)
                .collect(),
        );
        let range = match a.to_block {
            Some(hi) => (window.start_block, hi),
            None => DatasetName::range_of(rows.iter().map(|t| t.block_number)),
        };
        let name = DatasetName::new(&chain, a.direction.as_str(), class.as_str(), range);
        write_data(layout, &name, &rows, &mut manifest)?;
        say(
            out,
            format_args!("{}: {} transfers from {} addresses", class.as_str(), rows.len(), addresses.len()),
        );
    }
    manifest.retries = ingestor.retries();
    manifest.truncated_addresses = truncated;
    manifest.failed_addresses = failures.clone();
    manifest.finish(&layout.manifest_path("ingest"))?;
    if !failures.is_empty() {
        let listed = failures.keys().cloned().collect::<Vec<_>>().join(", ");
        if !fetched_any {
            return Err(Failure::Source(format!("every address failed: {listed}")));
        }
        return Err(Failure::Partial(format!("{} address queries failed: {listed}", failures.len())));
    }
    Ok(())
}

// ---------------------------------------------------------------- match

fn match_config(
    tolerance: u64,
    direction: Direction,
    exclusive: bool,
    symmetric: bool,
    strict: bool,
) -> Result<MatchConfig, Failure> {
    let mut cfg = MatchConfig::new(tolerance, direction).map_err(usage)?;
    if exclusive {
        cfg = cfg.exclusive();
    }
    if symmetric {
        cfg = cfg.symmetric();
    }
    if strict {
        cfg = cfg.strict();
    }
    Ok(cfg)
}

fn counts_json(c: &OutcomeCounts) -> serde_json::Value {
    json!({
        "exact": c.exact,
        "ambiguous": c.ambiguous,
        "unmatched": c.unmatched,
        "total": c.total(),
        "matchRate": c.rate_string(),
    })
}

fn cmd_match(ctx: &Ctx, a: MatchArgs, out: &mut dyn Write) -> Outcome {
    let spec = &ctx.spec;
    let cfg = match_config(a.tolerance, a.direction, a.exclusive, a.symmetric_window, a.strict_gap)?;
    let mut manifest = ctx.manifest(&format!("match-{}", a.direction))?;
    manifest
        .param("toleranceSeconds", a.tolerance)
        .param("direction", a.direction.as_str())
        .param("exclusive", a.exclusive)
        .param("symmetricWindow", a.symmetric_window)
        .param("strictGap", a.strict_gap);
    let all_events: Vec<BridgeEvent> = read_inputs(&a.events, &mut manifest)?;
    let transfers: Vec<ChainTransfer> = read_inputs(&a.transfers, &mut manifest)?;
    let events: Vec<BridgeEvent> = all_events.into_iter().filter(|e| e.direction == a.direction).collect();
    let layout = open_layout(&a.out)?;

    let report = match_all(&events, &transfers, &cfg, spec);
    let name = DatasetName::new(
        &chain_of(&events, spec.source_chain().as_str()),
        a.direction.as_str(),
        "all",
        DatasetName::range_of(events.iter().map(|e| e.block_number)),
    );
    write_data(&layout, &name, &report.records(), &mut manifest)?;

    let summary = json!({
        "direction": a.direction.as_str(),
        "toleranceSeconds": a.tolerance,
        "matchRate": report.match_rate_string(),
        "counts": counts_json(&report.counts),
        "perToken": report.per_token.iter().map(|(k, c)| (k.clone(), counts_json(c))).collect::<BTreeMap<_, _>>(),
        "perAssetType": report
            .per_class
            .iter()
            .map(|(k, c)| (k.token_type_label().to_string(), counts_json(c)))
            .collect::<BTreeMap<_, _>>(),
        "truncationExposure": report.truncation_exposure,
    });
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    let stem = name.file_name(Schema::Match);
    let stem = stem.trim_end_matches(".match.v1.ndj");
    write_report(&layout, &format!("{stem}.summary.json"), &bytes, &mut manifest)?;
    manifest.finish(&layout.manifest_path(&format!("match-{}", a.direction)))?;

    let c = report.counts;
    say(out, format_args!("matchRate: {}", report.match_rate_string()));
    say(
        out,
        format_args!(
            "exact: {} ambiguous: {} unmatched: {} truncationExposure: {}",
            c.exact, c.ambiguous, c.unmatched, report.truncation_exposure
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------- tune

fn peak_line(label: &str, curve: &SweepCurve) -> String {
    match find_peak(curve) {
        Some(p) => format!(
            "peak{label}: tolerance_seconds={} minutes={:.1} exact_rate={:.6}",
            p.tolerance_seconds,
            p.tolerance_seconds as f64 / 60.0,
            p.exact_rate
        ),
        None => format!("peak{label}: n/a"),
    }
}

fn cmd_tune(ctx: &Ctx, a: TuneArgs, out: &mut dyn Write) -> Outcome {
    let spec = &ctx.spec;
    let grid = a.grid.map(|g| g.0).unwrap_or_else(|| default_grid(a.direction));
    let cfg = match_config(grid.first().copied().unwrap_or(1), a.direction, a.exclusive, a.symmetric_window, a.strict_gap)?;
    let command = format!("tune-{}", a.direction);
    let mut manifest = ctx.manifest(&command)?;
    manifest.seeds.insert("sample".into(), a.seed);
    manifest
        .param("direction", a.direction.as_str())
        .param("sampleSize", a.sample_size)
        .param("grid", &grid)
        .param("perToken", a.per_token)
        .param("exclusive", a.exclusive)
        .param("symmetricWindow", a.symmetric_window)
        .param("strictGap", a.strict_gap);
    let events: Vec<BridgeEvent> = read_inputs(&a.events, &mut manifest)?;
    let transfers: Vec<ChainTransfer> = read_inputs(&a.transfers, &mut manifest)?;
    let events: Vec<BridgeEvent> = events.into_iter().filter(|e| e.direction == a.direction).collect();
    let layout = open_layout(&a.out)?;

    let groups: Vec<(String, Vec<BridgeEvent>)> = if a.per_token {
        group_by_token(&events, spec).into_iter().collect()
    } else {
        vec![(String::new(), events)]
    };
    for (token, group) in groups {
        let n = if a.per_token { a.sample_size.min(group.len()) } else { a.sample_size };
        let sample = sample_events(&group, n, a.seed).map_err(usage)?;
        let mut curve = sweep(&sample, &transfers, &grid, &cfg, spec).map_err(usage)?;
        curve.seed = Some(a.seed);
        let (file, label) = if token.is_empty() {
            (format!("tune-{}.csv", a.direction), String::new())
        } else {
            (format!("tune-{}-{}.csv", a.direction, file_token(&token)), format!("[{token}]"))
        };
        write_report(&layout, &file, &reports::sweep_csv(&curve), &mut manifest)?;
        say(out, format_args!("{}", peak_line(&label, &curve)));
    }
    manifest.finish(&layout.manifest_path(&command))?;
    Ok(())
}

// ---------------------------------------------------------------- report

fn cmd_report(ctx: &Ctx, a: ReportArgs, out: &mut dyn Write) -> Outcome {
    let spec = &ctx.spec;
    let any = a.time_cost || a.flows || a.composition || a.match_table || !a.graph.is_empty() || a.long_latency.is_some();
    if !any {
        return Err(Failure::Usage(
            "choose at least one of --time-cost, --flows, --composition, --match-table, --graph, --long-latency".into(),
        ));
    }
    if !(a.spike_factor.is_finite() && a.spike_factor > 0.0) {
        return Err(Failure::Usage("--spike-factor must be a positive number".into()));
    }
    let mut manifest = ctx.manifest("report")?;
    let records: Vec<MatchRecord> = read_inputs(&a.results, &mut manifest)?;
    let events: Vec<BridgeEvent> = read_inputs(&a.events, &mut manifest)?;
    let transfers: Vec<ChainTransfer> = read_inputs(&a.transfers, &mut manifest)?;
    let layout = open_layout(&a.out)?;
    let by_direction = |d: Direction, pool: &[BridgeEvent]| -> Vec<BridgeEvent> {
        pool.iter().filter(|e| e.direction == d).cloned().collect()
    };
    let counted = if a.exact_only { retain_exact(&events, &records) } else { events.clone() };

    if a.match_table {
        manifest.param("matchTable", true);
        let table = render_match_rate_table(&match_rate_rows(&tally_records(&records, &events, spec)));
        write_report(&layout, "match-table.txt", table.as_bytes(), &mut manifest)?;
        let _ = out.write_all(table.as_bytes());
    }
    if a.time_cost {
        manifest.param("timeCost", a.statistic.as_str());
        for d in [Direction::Deposit, Direction::Withdrawal] {
            let samples = samples_from_records(&records, &by_direction(d, &events));
            let series = time_cost_series(&samples, a.statistic);
            let file = format!("time-cost-{d}-{}.csv", a.statistic.as_str());
            write_report(&layout, &file, &reports::time_cost_csv(&series), &mut manifest)?;
            say(out, format_args!("time cost ({d}): {} days", series.points.len()));
        }
    }
    if a.flows {
        manifest.param("flows", json!({"exactOnly": a.exact_only, "spikeFactor": a.spike_factor}));
        let series = flow_series(
            &by_direction(Direction::Deposit, &counted),
            &by_direction(Direction::Withdrawal, &counted),
            a.spike_factor,
        );
        write_report(&layout, "flows.csv", &reports::flows_csv(&series), &mut manifest)?;
        let spikes = series.points.iter().filter(|p| p.spike).count();
        say(out, format_args!("flows: {} days, {} spikes", series.points.len(), spikes));
    }
    if a.composition {
        manifest.param("composition", json!({"exactOnly": a.exact_only}));
        for d in [Direction::Deposit, Direction::Withdrawal] {
            let rows = token_composition(&by_direction(d, &counted));
            write_report(&layout, &format!("composition-{d}.csv"), &reports::composition_csv(&rows), &mut manifest)?;
        }
    }
    if !a.graph.is_empty() {
        manifest.param("graph", &a.graph);
        for token in &a.graph {
            let graphs = collection_graph(&transfers, &events, &records, token, spec);
            for (chain, graph) in &graphs {
                let stem = format!("graph-{}-{}", file_token(token), file_token(chain));
                write_report(&layout, &format!("{stem}-edges.csv"), &reports::graph_edges_csv(graph), &mut manifest)?;
                write_report(&layout, &format!("{stem}-monthly.csv"), &reports::graph_months_csv(graph), &mut manifest)?;
                say(
                    out,
                    format_args!(
                        "graph {token} on {chain}: {} edges, {} addresses, cross-chain share {}",
                        graph.edges.len(),
                        graph.active_addresses(),
                        metric_string(graph.cross_chain_share())
                    ),
                );
            }
        }
    }
    if let Some(threshold) = a.long_latency {
        let as_of = a.as_of.unwrap_or_else(|| {
            events
                .iter()
                .map(|e| e.timestamp.0)
                .chain(transfers.iter().map(|t| t.timestamp.0))
                .max()
                .unwrap_or(0)
        });
        manifest.param("longLatency", json!({"thresholdSeconds": threshold, "asOf": as_of}));
        let entries = long_latency_report(&records, &events, threshold, Timestamp(as_of)).map_err(usage)?;
        write_report(&layout, "long-latency.csv", &reports::latency_csv(&entries), &mut manifest)?;
        say(out, format_args!("long latency: {} flagged", entries.len()));
    }
    manifest.finish(&layout.manifest_path("report"))?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

fn load_scenario(path: &Path) -> Result<TrafficScenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|x| x == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs, out: &mut dyn Write) -> Outcome {
    let mut manifest = ctx.manifest(&format!("simulate-{}", a.direction))?;
    let mut scenario = match (&a.scenario, a.preset.as_deref()) {
        (Some(p), _) => {
            manifest.input(p)?;
            load_scenario(p)?
        }
        (None, Some("s0")) | (None, None) => TrafficScenario::s0(),
        (None, Some("s2")) => TrafficScenario::s2(),
        (None, Some("s3")) => TrafficScenario::s3(),
        (None, Some(other)) => return Err(Failure::Usage(format!("unknown preset {other:?}; expected s0, s2 or s3"))),
    };
    if let Some(n) = a.n_pairs {
        scenario.n_pairs = n;
    }
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    if let Some(r) = a.collision_rate {
        scenario.value_collision_rate = r;
    }
    if let Some(r) = a.missing_rate {
        scenario.missing_counterpart_rate = r;
    }
    if let Some(r) = a.noise_rate {
        scenario.noise_transfer_rate = r;
    }
    if let Some(p) = a.address_pool {
        scenario.address_pool_size = p;
    }
    if let Some(l) = a.latency {
        scenario.latency = l;
    }
    let sim = generate(&scenario, a.direction).map_err(usage)?;
    manifest.seeds.insert("scenario".into(), scenario.seed);
    manifest
        .param("direction", a.direction.as_str())
        .param("scenario", &scenario);
    let layout = open_layout(&a.out)?;
    let name = DatasetName::new(
        "sim",
        a.direction.as_str(),
        "all",
        DatasetName::range_of(sim.events.iter().map(|e| e.block_number)),
    );
    write_data(&layout, &name, &sim.events, &mut manifest)?;
    write_data(&layout, &name, &sim.transfers, &mut manifest)?;
    let truth: Vec<TruthRecord> = sim.truth_records();
    write_data(&layout, &name, &truth, &mut manifest)?;
    manifest.finish(&layout.manifest_path(&format!("simulate-{}", a.direction)))?;
    say(
        out,
        format_args!(
            "events: {} transfers: {} truth: {}",
            sim.events.len(),
            sim.transfers.len(),
            truth.len()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Outcome {
    for (flag, floor) in [("--min-precision", a.min_precision), ("--min-recall", a.min_recall)] {
        if floor.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
            return Err(Failure::Usage(format!("{flag} must lie in [0, 1]")));
        }
    }
    let mut records: Vec<MatchRecord> = Vec::new();
    for p in &a.results {
        records.extend(store::read_validated::<MatchRecord>(p)?);
    }
    let mut truth = GroundTruth::new();
    for p in &a.truth {
        for t in store::read_validated::<TruthRecord>(p)? {
            if truth.insert(t.event_id.clone(), t.tx_id).is_some() {
                return Err(Failure::Usage(format!("{} appears twice in the truth", t.event_id)));
            }
        }
    }
    let s = score(&records, &truth).map_err(usage)?;
    say(out, format_args!("precision: {}", metric_string(s.precision)));
    say(out, format_args!("recall: {}", metric_string(s.recall)));
    say(out, format_args!("ambiguousRate: {}", metric_string(s.ambiguous_rate)));
    say(
        out,
        format_args!(
            "exact: {} correct: {} ambiguous: {} total: {} recoverable: {}",
            s.exact, s.correct, s.ambiguous, s.total, s.recoverable
        ),
    );
    let mut violations = Vec::new();
    for (name, floor, value) in [("precision", a.min_precision, s.precision), ("recall", a.min_recall, s.recall)] {
        if let Some(floor) = floor {
            if value.is_none_or(|v| v < floor) {
                violations.push(format!("{name} {} is below {floor}", metric_string(value)));
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gate(violations.join("; ")))
    }
}
