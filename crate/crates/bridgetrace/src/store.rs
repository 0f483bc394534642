// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Newline-delimited dataset files and the directory layout they live in.
//!
//! Every data file starts with a `#schema: <name>.v1` header line followed
//! by one JSON object per line. Files are written to a temporary sibling and
//! renamed into place, so a file visible at its final path is complete.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use bridgetrace_core::decode::{RawLog, RawTransaction};
use bridgetrace_core::matching::MatchRecord;
use bridgetrace_core::sim::TruthRecord;
use bridgetrace_core::{BridgeEvent, ChainTransfer};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

const HEADER_PREFIX: &str = "#schema: ";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum Schema {
    RawLog,
    RawTx,
    Event,
    Transfer,
    Match,
    Truth,
}

impl Schema {
    pub const ALL: [Schema; 6] = [
        Schema::RawLog,
        Schema::RawTx,
        Schema::Event,
        Schema::Transfer,
        Schema::Match,
        Schema::Truth,
    ];
    pub const VERSION: u32 = 1;

    pub fn name(self) -> &'static str {
        match self {
            Schema::RawLog => "raw_log",
            Schema::RawTx => "raw_tx",
            Schema::Event => "event",
            Schema::Transfer => "transfer",
            Schema::Match => "match",
            Schema::Truth => "truth",
        }
    }

    /// `event.v1`
    pub fn tag(self) -> String {
        format!("{}.v{}", self.name(), Self::VERSION)
    }

    pub fn header(self) -> String {
        format!("{HEADER_PREFIX}{}", self.tag())
    }

    pub fn from_name(name: &str) -> Option<Schema> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing or malformed schema header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: expected schema {expected}, file declares {found}")]
    SchemaMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: line {line}: {reason}")]
    Line {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("record {index} is invalid: {reason}")]
    Invalid { index: usize, reason: String },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A record type bound to one schema.
pub trait Record: Serialize + DeserializeOwned {
    const SCHEMA: Schema;

    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

impl Record for RawLog {
    const SCHEMA: Schema = Schema::RawLog;

    fn validate(&self) -> Result<(), String> {
        if self.topics.is_empty() || self.topics.len() > 4 {
            return Err(format!("{} topics, expected 1 to 4", self.topics.len()));
        }
        Ok(())
    }
}

impl Record for RawTransaction {
    const SCHEMA: Schema = Schema::RawTx;
}

impl Record for BridgeEvent {
    const SCHEMA: Schema = Schema::Event;

    fn validate(&self) -> Result<(), String> {
        self.check_consistency().map_err(|e| e.to_string())
    }
}

impl Record for ChainTransfer {
    const SCHEMA: Schema = Schema::Transfer;

    fn validate(&self) -> Result<(), String> {
        self.check_consistency().map_err(|e| e.to_string())
    }
}

impl Record for MatchRecord {
    const SCHEMA: Schema = Schema::Match;

    fn validate(&self) -> Result<(), String> {
        use bridgetrace_core::matching::OutcomeKind::*;
        let ok = match self.outcome {
            Exact => self.counterpart.is_some() && self.elapsed_seconds.is_some() && self.candidates.is_empty(),
            Ambiguous => self.counterpart.is_none() && self.elapsed_seconds.is_none() && self.candidates.len() >= 2,
            Unmatched => self.counterpart.is_none() && self.elapsed_seconds.is_none() && self.candidates.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("fields inconsistent with outcome {}", self.outcome.as_str()))
        }
    }
}

impl Record for TruthRecord {
    const SCHEMA: Schema = Schema::Truth;
}

/// Lowercase hex SHA-256.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

/// Serializes records with their header; validation happens before any
/// byte reaches the disk.
pub fn encode_records<R: Record>(records: &[R]) -> Result<Vec<u8>, StoreError> {
    let mut out = R::SCHEMA.header().into_bytes();
    out.push(b'\n');
    for (index, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|reason| StoreError::Invalid { index, reason })?;
        serde_json::to_writer(&mut out, r).map_err(|e| StoreError::Invalid {
            index,
            reason: e.to_string(),
        })?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Writes `bytes` to a temporary file next to `path`, syncs it, and renames
/// it over `path`. Returns the content digest.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<String, StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| StoreError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| StoreError::io(tmp.path(), e))?;
    tmp.persist(path)
        .map_err(|e| StoreError::io(path, e.error))?;
    Ok(digest_bytes(bytes))
}

pub fn write_atomic<R: Record>(path: &Path, records: &[R]) -> Result<String, StoreError> {
    let bytes = encode_records(records)?;
    write_bytes_atomic(path, &bytes)
}

/// Schema declared by a file's header line.
pub fn read_header(path: &Path) -> Result<(String, u32), StoreError> {
    let file = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| StoreError::io(path, e))?;
    parse_header(first.trim_end_matches(['\n', '\r'])).ok_or_else(|| StoreError::MissingHeader {
        path: path.to_path_buf(),
    })
}

fn parse_header(line: &str) -> Option<(String, u32)> {
    let tag = line.strip_prefix(HEADER_PREFIX)?;
    let (name, version) = tag.rsplit_once(".v")?;
    Some((name.to_string(), version.parse().ok()?))
}

/// Reads a file written for `R`, enforcing its schema on every line.
/// Blank lines are ignored; the first bad line is reported by number.
pub fn read_validated<R: Record>(path: &Path) -> Result<Vec<R>, StoreError> {
    let file = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| StoreError::io(path, e))?,
        None => {
            return Err(StoreError::MissingHeader {
                path: path.to_path_buf(),
            })
        }
    };
    let (name, version) = parse_header(header.trim_end()).ok_or_else(|| StoreError::MissingHeader {
        path: path.to_path_buf(),
    })?;
    if name != R::SCHEMA.name() || version != Schema::VERSION {
        return Err(StoreError::SchemaMismatch {
            path: path.to_path_buf(),
            expected: R::SCHEMA.tag(),
            found: format!("{name}.v{version}"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |reason: String| StoreError::Line {
            path: path.to_path_buf(),
            line: number,
            reason,
        };
        let record: R = serde_json::from_str(&line).map_err(|e| line_err(e.to_string()))?;
        record.validate().map_err(line_err)?;
        out.push(record);
    }
    Ok(out)
}

/// Reads and concatenates several files of the same schema.
pub fn read_all<R: Record>(paths: &[PathBuf]) -> Result<Vec<R>, StoreError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_validated::<R>(p)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DatasetDir {
    Raw,
    Events,
    Transfers,
    Matches,
    Reports,
    Manifests,
}

impl DatasetDir {
    pub const ALL: [DatasetDir; 6] = [
        DatasetDir::Raw,
        DatasetDir::Events,
        DatasetDir::Transfers,
        DatasetDir::Matches,
        DatasetDir::Reports,
        DatasetDir::Manifests,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetDir::Raw => "raw",
            DatasetDir::Events => "events",
            DatasetDir::Transfers => "transfers",
            DatasetDir::Matches => "matches",
            DatasetDir::Reports => "reports",
            DatasetDir::Manifests => "manifests",
        }
    }

    /// Directory a schema's files are placed in.
    pub fn for_schema(schema: Schema) -> DatasetDir {
        match schema {
            Schema::RawLog | Schema::RawTx => DatasetDir::Raw,
            Schema::Event | Schema::Truth => DatasetDir::Events,
            Schema::Transfer => DatasetDir::Transfers,
            Schema::Match => DatasetDir::Matches,
        }
    }
}

/// `<chain>-<direction>-<tokenclass>-<blockrange>` stem of a data file name.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DatasetName {
    pub chain: String,
    pub direction: String,
    pub token_class: String,
    pub block_range: (u64, u64),
}

impl DatasetName {
    pub fn new(chain: &str, direction: &str, token_class: &str, block_range: (u64, u64)) -> Self {
        Self {
            chain: chain.to_string(),
            direction: direction.to_string(),
            token_class: token_class.to_string(),
            block_range,
        }
    }

    /// Range spanning the given block numbers, `(0, 0)` when empty.
    pub fn range_of(blocks: impl IntoIterator<Item = u64>) -> (u64, u64) {
        blocks
            .into_iter()
            .fold(None, |acc: Option<(u64, u64)>, b| {
                Some(acc.map_or((b, b), |(lo, hi)| (lo.min(b), hi.max(b))))
            })
            .unwrap_or((0, 0))
    }

    pub fn file_name(&self, schema: Schema) -> String {
        format!(
            "{}-{}-{}-{}_{}.{}.ndj",
            self.chain, self.direction, self.token_class, self.block_range.0, self.block_range.1, schema
        )
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DatasetLayout {
    root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<(), StoreError> {
        for d in DatasetDir::ALL {
            let p = self.dir(d);
            fs::create_dir_all(&p).map_err(|e| StoreError::io(&p, e))?;
        }
        Ok(())
    }

    pub fn dir(&self, d: DatasetDir) -> PathBuf {
        self.root.join(d.name())
    }

    pub fn data_path(&self, name: &DatasetName, schema: Schema) -> PathBuf {
        self.dir(DatasetDir::for_schema(schema)).join(name.file_name(schema))
    }

    pub fn report_path(&self, file: &str) -> PathBuf {
        self.dir(DatasetDir::Reports).join(file)
    }

    pub fn manifest_path(&self, command: &str) -> PathBuf {
        self.dir(DatasetDir::Manifests).join(format!("{command}.manifest.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bridgetrace_core::matching::OutcomeKind;
    use bridgetrace_core::{AccountAddress, Amount, AssetClass, ChainLabel, Direction, Timestamp, TokenKey, TxId};

    fn event(i: u64) -> BridgeEvent {
        BridgeEvent {
            event_id: format!("e{i}"),
            tx_id: TxId([i as u8; 32]),
            log_index: i,
            receiver: AccountAddress([3; 20]),
            token: TokenKey::new("ETH", AssetClass::Native),
            amount: Some(Amount::from(1_000_000_000_000_000_000u64 + i)),
            token_ids: vec![],
            timestamp: Timestamp(1_700_000_000 + i),
            block_number: 18_000_000 + i,
            direction: Direction::Deposit,
            chain: ChainLabel::new("ethereum"),
        }
    }

    #[test]
    fn round_trip_and_stable_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.event.v1.ndj");
        let records: Vec<_> = (0..3).map(event).collect();
        let d1 = write_atomic(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("#schema: event.v1\n"));
        assert_eq!(read_validated::<BridgeEvent>(&path).unwrap(), records);
        let d2 = write_atomic(&path, &records).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(file_digest(&path).unwrap(), d1);
    }

    #[test]
    fn invalid_record_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.event.v1.ndj");
        let mut bad = event(1);
        bad.amount = None;
        let err = write_atomic(&path, &[event(0), bad]).unwrap_err();
        assert!(matches!(err, StoreError::Invalid { index: 1, .. }));
        assert!(!path.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn corrupt_line_is_reported_by_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.event.v1.ndj");
        write_atomic(&path, &(0..8).map(event).collect::<Vec<_>>()).unwrap();
        let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
        lines[6] = "{\"eventId\": ".into();
        fs::write(&path, lines.join("\n")).unwrap();
        let err = read_validated::<BridgeEvent>(&path).unwrap_err();
        assert!(matches!(err, StoreError::Line { line: 7, .. }), "{err}");
        assert!(err.to_string().contains("line 7"));
    }

    #[test]
    fn wrong_schema_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.truth.v1.ndj");
        write_atomic::<TruthRecord>(&path, &[]).unwrap();
        let err = read_validated::<MatchRecord>(&path).unwrap_err();
        assert!(matches!(err, StoreError::SchemaMismatch { .. }));
        fs::write(&path, "#schema: match.v2\n").unwrap();
        assert!(matches!(
            read_validated::<MatchRecord>(&path).unwrap_err(),
            StoreError::SchemaMismatch { .. }
        ));
        fs::write(&path, "{}\n").unwrap();
        assert!(matches!(
            read_validated::<MatchRecord>(&path).unwrap_err(),
            StoreError::MissingHeader { .. }
        ));
        assert_eq!(read_header(&dir.path().join("t.truth.v1.ndj")).ok(), None);
    }

    #[test]
    fn match_records_are_checked_against_their_outcome() {
        let r = MatchRecord {
            event_id: "x".into(),
            outcome: OutcomeKind::Exact,
            counterpart: None,
            elapsed_seconds: Some(3),
            candidates: vec![],
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn layout_names() {
        let layout = DatasetLayout::new("/data");
        let name = DatasetName::new("polygon", "deposit", "erc20", (10, 20));
        assert_eq!(
            layout.data_path(&name, Schema::Transfer),
            PathBuf::from("/data/transfers/polygon-deposit-erc20-10_20.transfer.v1.ndj")
        );
        assert_eq!(DatasetName::range_of([5, 3, 9]), (3, 9));
        assert_eq!(DatasetName::range_of([]), (0, 0));
        assert_eq!(Schema::from_name("raw_tx"), Some(Schema::RawTx));
    }
}
