// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Fetching bridge logs over block ranges and transfer histories per
//! address, with rate limiting, retries, and resumable checkpoints.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bridgetrace_core::decode::RawLog;
use bridgetrace_core::spec::{BridgeSpec, NULL_CONTRACT_ROLE};
use bridgetrace_core::{AccountAddress, AssetClass, ChainTransfer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{self, StoreError};

mod explorer;
mod rpc;

pub use explorer::{parse_explorer_response, ExplorerTransferProvider};
pub use rpc::{classify_rpc_error, parse_rpc_log, RpcLogProvider};

/// Prefix of the environment variables holding provider API keys.
pub const API_KEY_ENV_PREFIX: &str = "BRIDGETRACE_API_KEY_";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Worth retrying: timeouts, throttling, 5xx.
    #[error("transient provider failure: {0}")]
    Transient(String),
    /// The range produced more results than the provider returns at once.
    #[error("response limit exceeded: {0}")]
    TooLarge(String),
    #[error("provider failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("block range {from}..{to} is inverted")]
    InvertedRange { from: u64, to: u64 },
    #[error("invalid ingest source: {0}")]
    Config(String),
    #[error("blocks {from}..{to}: {source}")]
    Range {
        from: u64,
        to: u64,
        #[source]
        source: ProviderError,
    },
    #[error("address {address}: {source}")]
    Address {
        address: AccountAddress,
        #[source]
        source: ProviderError,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

// ---------------------------------------------------------------- clocks

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock whose `sleep` advances time instantly; records every sleep.
#[derive(Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
    sleeps: Mutex<Vec<Duration>>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.sleeps.lock().unwrap().push(d);
        self.advance(d);
    }
}

/// At most `per_second` acquisitions in any trailing one-second window.
/// Shared by all workers of an ingest run.
pub struct RateLimiter {
    per_second: u32,
    clock: Arc<dyn Clock>,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_second: u32, clock: Arc<dyn Clock>) -> Result<Self, IngestError> {
        if per_second == 0 {
            return Err(IngestError::Config("rate limit must be positive".into()));
        }
        Ok(Self {
            per_second,
            clock,
            issued: Mutex::new(VecDeque::new()),
        })
    }

    pub fn acquire(&self) {
        let window = Duration::from_secs(1);
        let mut issued = self.issued.lock().unwrap();
        loop {
            let now = self.clock.now();
            while issued.front().is_some_and(|t| now.saturating_sub(*t) >= window) {
                issued.pop_front();
            }
            if issued.len() < self.per_second as usize {
                issued.push_back(now);
                return;
            }
            let oldest = *issued.front().expect("window is full");
            self.clock.sleep(oldest + window - now);
        }
    }
}

// ---------------------------------------------------------------- sources

/// Where an ingest run reads from, and how politely.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSource {
    pub kind: SourceKind,
    #[serde(default)]
    pub url: Option<String>,
    /// Suffix of the `BRIDGETRACE_API_KEY_<NAME>` variable holding the key.
    #[serde(default)]
    pub api_key_name: Option<String>,
    /// Fixture file; relative paths resolve against the source file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Chain label given to fetched transfers.
    #[serde(default)]
    pub chain: Option<String>,
    #[serde(flatten)]
    pub settings: IngestSettings,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Rpc,
    Explorer,
    Fixture,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    /// Requests per second.
    pub rate_limit: u32,
    /// Most records kept per address query.
    pub page_limit: usize,
    pub page_size: usize,
    pub max_retries: u32,
    pub backoff_base_millis: u64,
    pub initial_chunk_blocks: u64,
    pub max_chunk_blocks: u64,
    /// Concurrent per-address fetches.
    pub jobs: usize,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            rate_limit: 5,
            page_limit: 10_000,
            page_size: 1_000,
            max_retries: 3,
            backoff_base_millis: 500,
            initial_chunk_blocks: 2_000,
            max_chunk_blocks: 100_000,
            jobs: 1,
        }
    }
}

impl IngestSettings {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::Config(m.to_string()));
        if self.rate_limit == 0 {
            return bad("rate_limit must be positive");
        }
        if self.page_limit == 0 || self.page_size == 0 {
            return bad("page_limit and page_size must be positive");
        }
        if self.initial_chunk_blocks == 0 || self.max_chunk_blocks < self.initial_chunk_blocks {
            return bad("chunk sizes must satisfy 0 < initial_chunk_blocks <= max_chunk_blocks");
        }
        if self.jobs == 0 {
            return bad("jobs must be positive");
        }
        Ok(())
    }
}

impl IngestSource {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        let mut source: IngestSource =
            toml::from_str(&text).map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(p), Some(dir)) = (&source.path, path.parent()) {
            if p.is_relative() {
                source.path = Some(dir.join(p));
            }
        }
        source.settings.validate()?;
        Ok(source)
    }

    /// Reads the API key from the environment; never from the file.
    pub fn api_key(&self) -> Result<Option<String>, IngestError> {
        let Some(name) = &self.api_key_name else {
            return Ok(None);
        };
        let var = format!("{API_KEY_ENV_PREFIX}{}", name.to_ascii_uppercase());
        std::env::var(&var)
            .map(Some)
            .map_err(|_| IngestError::Config(format!("environment variable {var} is not set")))
    }

    fn require_url(&self) -> Result<&str, IngestError> {
        self.url
            .as_deref()
            .ok_or_else(|| IngestError::Config("source needs a url".into()))
    }

    fn require_path(&self) -> Result<&Path, IngestError> {
        self.path
            .as_deref()
            .ok_or_else(|| IngestError::Config("fixture source needs a path".into()))
    }

    pub fn log_provider(&self) -> Result<Box<dyn LogProvider>, IngestError> {
        match self.kind {
            SourceKind::Rpc => Ok(Box::new(RpcLogProvider::new(self.require_url()?))),
            SourceKind::Fixture => Ok(Box::new(FixtureLogProvider::new(store::read_validated(
                self.require_path()?,
            )?))),
            SourceKind::Explorer => Err(IngestError::Config("explorer sources serve transfers, not logs".into())),
        }
    }

    pub fn transfer_provider(&self) -> Result<Box<dyn TransferProvider>, IngestError> {
        match self.kind {
            SourceKind::Explorer => {
                let chain = self.chain.clone().unwrap_or_else(|| "polygon".into());
                Ok(Box::new(ExplorerTransferProvider::new(self.require_url()?, self.api_key()?, chain)))
            }
            SourceKind::Fixture => Ok(Box::new(FixtureTransferProvider::new(store::read_validated(
                self.require_path()?,
            )?))),
            SourceKind::Rpc => Err(IngestError::Config("rpc sources serve logs, not transfer histories".into())),
        }
    }
}

// ---------------------------------------------------------------- providers

pub trait LogProvider: Send + Sync {
    /// Logs emitted by `addresses` in blocks `from..=to`.
    fn get_logs(&self, addresses: &[AccountAddress], from: u64, to: u64) -> Result<Vec<RawLog>, ProviderError>;
}

/// Block interval of an address history query, inclusive.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TransferWindow {
    pub start_block: u64,
    pub end_block: u64,
}

impl TransferWindow {
    pub const ALL: TransferWindow = TransferWindow {
        start_block: 0,
        end_block: u64::MAX,
    };
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct TransferPage {
    pub rows: Vec<ChainTransfer>,
    /// The provider has rows past this page.
    pub has_more: bool,
}

pub trait TransferProvider: Send + Sync {
    /// Transfers into or out of `address` of the given asset family, rows
    /// `offset..offset + limit` in ascending time.
    fn transfers(
        &self,
        address: AccountAddress,
        class: AssetClass,
        window: TransferWindow,
        offset: usize,
        limit: usize,
    ) -> Result<TransferPage, ProviderError>;
}

pub struct FixtureLogProvider {
    logs: Vec<RawLog>,
}

impl FixtureLogProvider {
    pub fn new(mut logs: Vec<RawLog>) -> Self {
        logs.sort_by_key(|l| (l.block_number, l.log_index));
        Self { logs }
    }
}

impl LogProvider for FixtureLogProvider {
    fn get_logs(&self, addresses: &[AccountAddress], from: u64, to: u64) -> Result<Vec<RawLog>, ProviderError> {
        Ok(self
            .logs
            .iter()
            .filter(|l| (from..=to).contains(&l.block_number) && addresses.contains(&l.address))
            .cloned()
            .collect())
    }
}

pub struct FixtureTransferProvider {
    transfers: Vec<ChainTransfer>,
}

impl FixtureTransferProvider {
    pub fn new(mut transfers: Vec<ChainTransfer>) -> Self {
        transfers.sort_by_key(|t| (t.timestamp, t.block_number, t.tx_id));
        Self { transfers }
    }
}

impl TransferProvider for FixtureTransferProvider {
    fn transfers(
        &self,
        address: AccountAddress,
        class: AssetClass,
        window: TransferWindow,
        offset: usize,
        limit: usize,
    ) -> Result<TransferPage, ProviderError> {
        let all: Vec<&ChainTransfer> = self
            .transfers
            .iter()
            .filter(|t| {
                (t.to_address == address || t.from_address == address)
                    && t.token.class.match_family() == class.match_family()
                    && (window.start_block..=window.end_block).contains(&t.block_number)
            })
            .collect();
        let end = offset.saturating_add(limit).min(all.len());
        let rows = all
            .get(offset.min(all.len())..end)
            .unwrap_or_default()
            .iter()
            .map(|t| ChainTransfer {
                truncated: false,
                ..(*t).clone()
            })
            .collect();
        Ok(TransferPage {
            rows,
            has_more: end < all.len(),
        })
    }
}

// ---------------------------------------------------------------- checkpoints

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestCheckpoint {
    pub last_block_scanned: Option<u64>,
    pub addresses_completed: BTreeSet<AccountAddress>,
    pub truncated_addresses: BTreeSet<AccountAddress>,
    pub retries: u64,
}

impl IngestCheckpoint {
    /// Moves the scan cursor forward; it never moves back.
    pub fn advance(&mut self, block: u64) -> Result<(), String> {
        match self.last_block_scanned {
            Some(last) if block < last => Err(format!("cursor would move back from {last} to {block}")),
            _ => {
                self.last_block_scanned = Some(block);
                Ok(())
            }
        }
    }
}

/// Receives scan results chunk by chunk.
pub trait ScanSink {
    /// Last block already committed by an earlier run.
    fn resume_after(&self) -> Option<u64>;
    fn commit_chunk(&mut self, from: u64, to: u64, logs: Vec<RawLog>) -> Result<(), IngestError>;
}

/// Receives per-address histories.
pub trait HistorySink: Send {
    fn is_done(&self, address: &AccountAddress) -> bool;
    fn commit_history(&mut self, address: AccountAddress, history: AddressHistory) -> Result<(), IngestError>;
    fn add_retries(&mut self, _n: u64) -> Result<(), IngestError> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    pub logs: Vec<RawLog>,
    pub last_block: Option<u64>,
    pub histories: BTreeMap<AccountAddress, AddressHistory>,
}

impl ScanSink for MemorySink {
    fn resume_after(&self) -> Option<u64> {
        self.last_block
    }

    fn commit_chunk(&mut self, _from: u64, to: u64, logs: Vec<RawLog>) -> Result<(), IngestError> {
        self.logs.extend(logs);
        self.last_block = Some(to);
        Ok(())
    }
}

impl HistorySink for MemorySink {
    fn is_done(&self, address: &AccountAddress) -> bool {
        self.histories.contains_key(address)
    }

    fn commit_history(&mut self, address: AccountAddress, history: AddressHistory) -> Result<(), IngestError> {
        self.histories.insert(address, history);
        Ok(())
    }
}

/// Persists every committed chunk and history to a work directory before
/// advancing a JSON checkpoint, so an interrupted run resumes where the last
/// commit left off and never loses or repeats data.
pub struct CheckpointDir {
    dir: PathBuf,
    state: IngestCheckpoint,
}

impl CheckpointDir {
    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        let path = dir.join("checkpoint.json");
        let state = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| IngestError::Checkpoint {
                path: path.clone(),
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => IngestCheckpoint::default(),
            Err(e) => {
                return Err(IngestError::Checkpoint {
                    path,
                    reason: e.to_string(),
                })
            }
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            state,
        })
    }

    pub fn state(&self) -> &IngestCheckpoint {
        &self.state
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    fn save(&self) -> Result<(), IngestError> {
        let bytes = serde_json::to_vec_pretty(&self.state).expect("checkpoint serializes");
        store::write_bytes_atomic(&self.checkpoint_path(), &bytes)?;
        Ok(())
    }

    fn chunk_dir(&self) -> PathBuf {
        self.dir.join("chunks")
    }

    fn history_dir(&self) -> PathBuf {
        self.dir.join("histories")
    }

    /// Every committed log, in (block, log index) order without repeats.
    pub fn logs(&self) -> Result<Vec<RawLog>, IngestError> {
        let mut logs: Vec<RawLog> = Vec::new();
        for path in sorted_files(&self.chunk_dir())? {
            logs.extend(store::read_validated::<RawLog>(&path)?);
        }
        Ok(order_logs(logs))
    }

    pub fn histories(&self) -> Result<BTreeMap<AccountAddress, AddressHistory>, IngestError> {
        let mut out = BTreeMap::new();
        for address in &self.state.addresses_completed {
            let path = self.history_dir().join(format!("{address}.transfer.v1.ndj"));
            let transfers: Vec<ChainTransfer> = store::read_validated(&path)?;
            out.insert(
                *address,
                AddressHistory {
                    transfers,
                    truncated: self.state.truncated_addresses.contains(address),
                },
            );
        }
        Ok(out)
    }
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(StoreError::Io {
                path: dir.to_path_buf(),
                source: e,
            }
            .into())
        }
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndj"))
        .collect();
    files.sort();
    Ok(files)
}

impl ScanSink for CheckpointDir {
    fn resume_after(&self) -> Option<u64> {
        self.state.last_block_scanned
    }

    fn commit_chunk(&mut self, from: u64, to: u64, logs: Vec<RawLog>) -> Result<(), IngestError> {
        let path = self.chunk_dir().join(format!("{from:012}-{to:012}.raw_log.v1.ndj"));
        store::write_atomic(&path, &logs)?;
        let checkpoint_path = self.checkpoint_path();
        self.state
            .advance(to)
            .map_err(|reason| IngestError::Checkpoint {
                path: checkpoint_path,
                reason,
            })?;
        self.save()
    }
}

impl HistorySink for CheckpointDir {
    fn is_done(&self, address: &AccountAddress) -> bool {
        self.state.addresses_completed.contains(address)
    }

    fn commit_history(&mut self, address: AccountAddress, history: AddressHistory) -> Result<(), IngestError> {
        let path = self.history_dir().join(format!("{address}.transfer.v1.ndj"));
        store::write_atomic(&path, &history.transfers)?;
        self.state.addresses_completed.insert(address);
        if history.truncated {
            self.state.truncated_addresses.insert(address);
        }
        self.save()
    }

    fn add_retries(&mut self, n: u64) -> Result<(), IngestError> {
        self.state.retries += n;
        self.save()
    }
}

/// Sorts by (block, log index) and drops repeated (tx, log index) entries.
pub fn order_logs(mut logs: Vec<RawLog>) -> Vec<RawLog> {
    logs.sort_by_key(|l| (l.block_number, l.log_index, l.tx_id));
    logs.dedup_by(|a, b| a.tx_id == b.tx_id && a.log_index == b.log_index);
    logs
}

// ---------------------------------------------------------------- ingestor

/// Every configured bridge contract except the null contract.
pub fn bridge_addresses(spec: &BridgeSpec) -> Vec<AccountAddress> {
    spec.contracts()
        .iter()
        .filter(|(role, _)| role.as_str() != NULL_CONTRACT_ROLE)
        .map(|(_, a)| *a)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Bridge contracts plus the registered token contracts, whose `Transfer`
/// logs carry fungible exits.
pub fn bridge_and_token_addresses(spec: &BridgeSpec) -> Vec<AccountAddress> {
    let mut all: BTreeSet<AccountAddress> = bridge_addresses(spec).into_iter().collect();
    all.extend(spec.tokens().keys().copied());
    all.into_iter().collect()
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct AddressHistory {
    /// Ascending (timestamp, block, tx id); exact duplicates removed.
    pub transfers: Vec<ChainTransfer>,
    /// The page limit was hit before the provider ran out of rows.
    pub truncated: bool,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ScanSummary {
    pub chunks: u64,
    pub logs: u64,
    pub retries: u64,
    pub resumed_after: Option<u64>,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct BatchOutcome {
    pub fetched: u64,
    pub skipped: u64,
    pub failures: BTreeMap<AccountAddress, String>,
    pub retries: u64,
}

pub struct Ingestor {
    settings: IngestSettings,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    retries: AtomicU64,
}

impl Ingestor {
    pub fn new(settings: IngestSettings, clock: Arc<dyn Clock>) -> Result<Self, IngestError> {
        settings.validate()?;
        Ok(Self {
            limiter: RateLimiter::new(settings.rate_limit, clock.clone())?,
            settings,
            clock,
            retries: AtomicU64::new(0),
        })
    }

    pub fn settings(&self) -> &IngestSettings {
        &self.settings
    }

    /// Retries performed so far by this ingestor.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// Calls `op` under the rate limiter, retrying transient failures with
    /// exponential backoff. Other failures return at once.
    fn call<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            match op() {
                Err(ProviderError::Transient(_)) if attempt < self.settings.max_retries => {
                    let backoff = self.settings.backoff_base_millis.saturating_mul(1 << attempt.min(20));
                    self.clock.sleep(Duration::from_millis(backoff));
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Scans `from..=to` for logs emitted by `addresses`, committing each
    /// chunk to `sink`. A failing chunk stops the scan; committed chunks
    /// stay committed and a later call resumes after them.
    pub fn scan_bridge_logs(
        &self,
        provider: &dyn LogProvider,
        addresses: &[AccountAddress],
        from: u64,
        to: u64,
        sink: &mut dyn ScanSink,
    ) -> Result<ScanSummary, IngestError> {
        if from > to {
            return Err(IngestError::InvertedRange { from, to });
        }
        let before = self.retries();
        let resumed_after = sink.resume_after().filter(|b| *b >= from);
        let mut cursor = match resumed_after {
            Some(b) if b >= to => to.saturating_add(1),
            Some(b) => b + 1,
            None => from,
        };
        let mut chunk = self.settings.initial_chunk_blocks;
        let mut summary = ScanSummary {
            resumed_after,
            ..ScanSummary::default()
        };
        while cursor <= to {
            let end = cursor.saturating_add(chunk - 1).min(to);
            match self.call(|| provider.get_logs(addresses, cursor, end)) {
                Ok(logs) => {
                    let logs: Vec<RawLog> = order_logs(
                        logs.into_iter()
                            .filter(|l| addresses.contains(&l.address) && (cursor..=end).contains(&l.block_number))
                            .collect(),
                    );
                    summary.logs += logs.len() as u64;
                    summary.chunks += 1;
                    sink.commit_chunk(cursor, end, logs)?;
                    if end == u64::MAX {
                        break;
                    }
                    cursor = end + 1;
                    chunk = chunk.saturating_mul(2).min(self.settings.max_chunk_blocks);
                }
                Err(ProviderError::TooLarge(_)) if end > cursor => {
                    let width = end - cursor + 1;
                    chunk = (width / 2).max(1);
                }
                Err(source) => {
                    return Err(IngestError::Range {
                        from: cursor,
                        to: end,
                        source,
                    })
                }
            }
        }
        summary.retries = self.retries() - before;
        Ok(summary)
    }

    /// Full history of one address, up to the page limit.
    pub fn fetch_address_transfers(
        &self,
        provider: &dyn TransferProvider,
        address: AccountAddress,
        class: AssetClass,
        window: TransferWindow,
    ) -> Result<AddressHistory, IngestError> {
        let limit = self.settings.page_limit;
        let mut rows: Vec<ChainTransfer> = Vec::new();
        let mut truncated = false;
        loop {
            let offset = rows.len();
            let page = self
                .call(|| provider.transfers(address, class, window, offset, self.settings.page_size))
                .map_err(|source| IngestError::Address { address, source })?;
            let empty = page.rows.is_empty();
            rows.extend(page.rows);
            if rows.len() >= limit {
                truncated = rows.len() > limit || page.has_more;
                rows.truncate(limit);
                break;
            }
            if !page.has_more || empty {
                break;
            }
        }
        let mut transfers = dedup_transfers(rows);
        for t in &mut transfers {
            t.truncated = truncated;
        }
        Ok(AddressHistory { transfers, truncated })
    }

    /// Fetches every address not yet done in `sink`, with up to
    /// `settings.jobs` workers. Failed addresses are reported, not fatal.
    pub fn fetch_many(
        &self,
        provider: &dyn TransferProvider,
        addresses: &[AccountAddress],
        class: AssetClass,
        window: TransferWindow,
        sink: &mut dyn HistorySink,
    ) -> Result<BatchOutcome, IngestError> {
        let before = self.retries();
        let todo: Vec<AccountAddress> = addresses
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|a| !sink.is_done(a))
            .collect();
        let skipped = addresses.iter().collect::<BTreeSet<_>>().len() - todo.len();
        let next = AtomicUsize::new(0);
        let shared = Mutex::new((sink, BatchOutcome::default(), None::<IngestError>));
        std::thread::scope(|scope| {
            for _ in 0..self.settings.jobs.min(todo.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&address) = todo.get(i) else { break };
                    let result = self.fetch_address_transfers(provider, address, class, window);
                    let mut guard = shared.lock().unwrap();
                    let (sink, outcome, fatal) = &mut *guard;
                    if fatal.is_some() {
                        break;
                    }
                    match result {
                        Ok(history) => match sink.commit_history(address, history) {
                            Ok(()) => outcome.fetched += 1,
                            Err(e) => *fatal = Some(e),
                        },
                        Err(e) => {
                            outcome.failures.insert(address, e.to_string());
                        }
                    }
                });
            }
        });
        let (sink, mut outcome, fatal) = shared.into_inner().unwrap();
        if let Some(e) = fatal {
            return Err(e);
        }
        outcome.skipped = skipped as u64;
        outcome.retries = self.retries() - before;
        sink.add_retries(outcome.retries)?;
        Ok(outcome)
    }
}

/// Ascending (timestamp, block, tx id); rows identical in every field are
/// kept once.
pub fn dedup_transfers(mut rows: Vec<ChainTransfer>) -> Vec<ChainTransfer> {
    rows.sort_by_key(|t| (t.timestamp, t.block_number, t.tx_id));
    let mut out: Vec<ChainTransfer> = Vec::with_capacity(rows.len());
    for row in rows {
        let key = (row.timestamp, row.block_number, row.tx_id);
        let repeated = out
            .iter()
            .rev()
            .take_while(|k| (k.timestamp, k.block_number, k.tx_id) == key)
            .any(|k| *k == row);
        if !repeated {
            out.push(row);
        }
    }
    out
}
