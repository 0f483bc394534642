// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Cross-chain matching.
//!
//! Each event is paired with the transfers received by the same address on
//! the counterpart chain. A candidate survives when all four criteria hold:
//!
//! 1. the transfer's recipient is the event's receiver,
//! 2. the timestamp gap is inside the tolerance window,
//! 3. the tokens are the same asset (native Ether pairs with WETH through
//!    the spec's equivalence map, other tokens by symbol),
//! 4. amounts are equal for valued assets, token ids for non-fungible ones.
//!
//! One survivor is an exact match, two or more are ambiguous, none is
//! unmatched. Only exact matches count toward the match rate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::ArgumentError;
use crate::model::{
    AccountAddress, AssetClass, BridgeEvent, ChainTransfer, Direction, Timestamp, TxId,
};
use crate::pool::{exit_pool, ExitRecord};
use crate::spec::{token_equivalent, BridgeSpec};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MatchConfig {
    tolerance_seconds: u64,
    /// Destination timestamp must not precede the source timestamp.
    pub causal_only: bool,
    /// Drop candidates whose gap equals the tolerance.
    pub strict_gap: bool,
    /// Each transfer can be the exact match of at most one event.
    pub exclusive_assignment: bool,
    pub direction: Direction,
}

impl MatchConfig {
    pub fn new(tolerance_seconds: u64, direction: Direction) -> Result<Self, ArgumentError> {
        if tolerance_seconds == 0 {
            return Err(ArgumentError::ZeroTolerance);
        }
        Ok(Self {
            tolerance_seconds,
            causal_only: true,
            strict_gap: false,
            exclusive_assignment: false,
            direction,
        })
    }

    pub fn tolerance_seconds(&self) -> u64 {
        self.tolerance_seconds
    }

    pub fn with_tolerance(self, tolerance_seconds: u64) -> Result<Self, ArgumentError> {
        if tolerance_seconds == 0 {
            return Err(ArgumentError::ZeroTolerance);
        }
        Ok(Self {
            tolerance_seconds,
            ..self
        })
    }

    pub fn symmetric(mut self) -> Self {
        self.causal_only = false;
        self
    }

    pub fn strict(mut self) -> Self {
        self.strict_gap = true;
        self
    }

    pub fn exclusive(mut self) -> Self {
        self.exclusive_assignment = true;
        self
    }

    fn gap_ok(&self, delta: i64) -> bool {
        let tol = self.tolerance_seconds as i128;
        let delta = delta as i128;
        let magnitude = if self.causal_only {
            if delta < 0 {
                return false;
            }
            delta
        } else {
            delta.abs()
        };
        if self.strict_gap {
            magnitude < tol
        } else {
            magnitude <= tol
        }
    }

    /// Inclusive timestamp bounds a candidate can fall in for an event at `ts`.
    fn window(&self, ts: Timestamp) -> (u64, u64) {
        let upper = ts.0.saturating_add(self.tolerance_seconds);
        let lower = if self.causal_only {
            ts.0
        } else {
            ts.0.saturating_sub(self.tolerance_seconds)
        };
        (lower, upper)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct IndexKey {
    pub receiver: AccountAddress,
    /// Representative symbol of the token's equivalence class.
    pub token_class: String,
    pub family: AssetClass,
}

impl IndexKey {
    fn for_event(e: &BridgeEvent, spec: &BridgeSpec) -> Self {
        Self {
            receiver: e.receiver,
            token_class: spec.token_class(&e.token.symbol),
            family: e.token.class.match_family(),
        }
    }

    fn for_transfer(t: &ChainTransfer, spec: &BridgeSpec) -> Self {
        Self {
            receiver: t.to_address,
            token_class: spec.token_class(&t.token.symbol),
            family: t.token.class.match_family(),
        }
    }
}

/// Transfers bucketed by (receiver, token class, asset family), each bucket
/// sorted by timestamp so the tolerance window is a binary search away.
#[derive(Clone, Debug, Default)]
pub struct CandidateIndex {
    buckets: BTreeMap<IndexKey, Vec<(usize, ChainTransfer)>>,
    truncated: BTreeSet<AccountAddress>,
    len: usize,
}

impl CandidateIndex {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn key_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, key: &IndexKey) -> impl Iterator<Item = &ChainTransfer> {
        self.buckets
            .get(key)
            .into_iter()
            .flat_map(|b| b.iter().map(|(_, t)| t))
    }

    pub fn keys(&self) -> impl Iterator<Item = &IndexKey> {
        self.buckets.keys()
    }

    /// Addresses whose ingested history hit the provider's page limit.
    pub fn truncated_addresses(&self) -> &BTreeSet<AccountAddress> {
        &self.truncated
    }

    /// Surviving candidates as (index slot, transfer), in timestamp order.
    fn survivors<'a>(
        &'a self,
        e: &'a BridgeEvent,
        cfg: &'a MatchConfig,
        spec: &'a BridgeSpec,
    ) -> impl Iterator<Item = &'a (usize, ChainTransfer)> + 'a {
        let bucket: &[(usize, ChainTransfer)] = self
            .buckets
            .get(&IndexKey::for_event(e, spec))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let (lo, hi) = cfg.window(e.timestamp);
        let start = bucket.partition_point(|(_, t)| t.timestamp.0 < lo);
        let end = bucket.partition_point(|(_, t)| t.timestamp.0 <= hi);
        bucket[start..end.max(start)]
            .iter()
            .filter(move |(_, p)| passes_criteria(e, p, cfg, spec))
    }
}

pub fn build_candidate_index(transfers: &[ChainTransfer], spec: &BridgeSpec) -> CandidateIndex {
    let mut buckets: BTreeMap<IndexKey, Vec<(usize, ChainTransfer)>> = BTreeMap::new();
    let mut truncated = BTreeSet::new();
    for (slot, t) in transfers.iter().enumerate() {
        if t.truncated {
            truncated.insert(t.to_address);
        }
        buckets
            .entry(IndexKey::for_transfer(t, spec))
            .or_default()
            .push((slot, t.clone()));
    }
    for bucket in buckets.values_mut() {
        bucket.sort_by(|(sa, a), (sb, b)| {
            (a.timestamp, a.block_number, a.tx_id, *sa).cmp(&(b.timestamp, b.block_number, b.tx_id, *sb))
        });
    }
    CandidateIndex {
        buckets,
        truncated,
        len: transfers.len(),
    }
}

/// All four matching criteria for one (event, transfer) pair.
pub fn passes_criteria(
    e: &BridgeEvent,
    p: &ChainTransfer,
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> bool {
    if e.token.class.match_family() != p.token.class.match_family() {
        return false;
    }
    // 1: same receiving address
    if e.receiver != p.to_address {
        return false;
    }
    // 2: time gap
    if !cfg.gap_ok(p.timestamp.signed_since(e.timestamp)) {
        return false;
    }
    // 3: same asset
    if !token_equivalent(&e.token, &p.token, spec) {
        return false;
    }
    // 4: same value or token id
    match e.token.class {
        AssetClass::Native | AssetClass::Fungible => e.amount.is_some() && e.amount == p.amount,
        AssetClass::NonFungible => {
            e.token_ids.len() == 1 && p.token_id.as_ref() == e.token_ids.first()
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum MatchOutcome {
    Exact(ChainTransfer),
    Ambiguous(Vec<ChainTransfer>),
    Unmatched,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Exact,
    Ambiguous,
    Unmatched,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Ambiguous => "ambiguous",
            Self::Unmatched => "unmatched",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MatchResult {
    pub event_id: String,
    pub outcome: MatchOutcome,
    /// Counterpart timestamp minus event timestamp; present iff exact.
    pub elapsed_seconds: Option<i64>,
}

impl MatchResult {
    fn classify(e: &BridgeEvent, mut survivors: Vec<ChainTransfer>) -> Self {
        let (outcome, elapsed_seconds) = match survivors.len() {
            0 => (MatchOutcome::Unmatched, None),
            1 => {
                let p = survivors.pop().expect("one survivor");
                let dt = p.timestamp.signed_since(e.timestamp);
                (MatchOutcome::Exact(p), Some(dt))
            }
            _ => (MatchOutcome::Ambiguous(survivors), None),
        };
        Self {
            event_id: e.event_id.clone(),
            outcome,
            elapsed_seconds,
        }
    }

    pub fn kind(&self) -> OutcomeKind {
        match self.outcome {
            MatchOutcome::Exact(_) => OutcomeKind::Exact,
            MatchOutcome::Ambiguous(_) => OutcomeKind::Ambiguous,
            MatchOutcome::Unmatched => OutcomeKind::Unmatched,
        }
    }

    pub fn counterpart(&self) -> Option<&ChainTransfer> {
        match &self.outcome {
            MatchOutcome::Exact(p) => Some(p),
            _ => None,
        }
    }

    /// Flat form written to result files.
    pub fn record(&self) -> MatchRecord {
        MatchRecord {
            event_id: self.event_id.clone(),
            outcome: self.kind(),
            counterpart: self.counterpart().map(|p| p.tx_id),
            elapsed_seconds: self.elapsed_seconds,
            candidates: match &self.outcome {
                MatchOutcome::Ambiguous(c) => c.iter().map(|p| p.tx_id).collect(),
                _ => Vec::new(),
            },
        }
    }
}

/// One line of a result file.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchRecord {
    pub event_id: String,
    pub outcome: OutcomeKind,
    pub counterpart: Option<TxId>,
    pub elapsed_seconds: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<TxId>,
}

/// Matches one event against the index, independently of other events.
pub fn match_event(
    e: &BridgeEvent,
    index: &CandidateIndex,
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> MatchResult {
    let survivors = index
        .survivors(e, cfg, spec)
        .map(|(_, p)| p.clone())
        .collect();
    MatchResult::classify(e, survivors)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub exact: u64,
    pub ambiguous: u64,
    pub unmatched: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.exact + self.ambiguous + self.unmatched
    }

    fn add(&mut self, kind: OutcomeKind) {
        match kind {
            OutcomeKind::Exact => self.exact += 1,
            OutcomeKind::Ambiguous => self.ambiguous += 1,
            OutcomeKind::Unmatched => self.unmatched += 1,
        }
    }

    /// Exact share rendered as a percentage with two decimals, or `n/a`.
    pub fn rate_string(&self) -> String {
        format_rate(self.exact, self.total())
    }

    pub fn rate(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.exact as f64 / total as f64)
    }
}

/// `exact / total` as a percentage rounded half-up to two decimals.
pub fn format_rate(exact: u64, total: u64) -> String {
    if total == 0 {
        return String::from("n/a");
    }
    let (exact, total) = (exact as u128, total as u128);
    let hundredths = (exact * 20_000 + total) / (2 * total);
    alloc::format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}

#[derive(Clone, PartialEq, Debug)]
pub struct MatchReport {
    pub direction: Direction,
    pub results: Vec<MatchResult>,
    pub counts: OutcomeCounts,
    /// Keyed by token equivalence class.
    pub per_token: BTreeMap<String, OutcomeCounts>,
    /// Keyed by table row (wrapped native assets count as native).
    pub per_class: BTreeMap<AssetClass, OutcomeCounts>,
    /// Unmatched events whose receiver's history was truncated at ingest.
    pub truncation_exposure: u64,
}

impl MatchReport {
    pub fn match_rate(&self) -> Option<f64> {
        self.counts.rate()
    }

    pub fn match_rate_string(&self) -> String {
        self.counts.rate_string()
    }

    pub fn records(&self) -> Vec<MatchRecord> {
        self.results.iter().map(MatchResult::record).collect()
    }
}

fn assemble(
    events: &[BridgeEvent],
    results: Vec<MatchResult>,
    index: &CandidateIndex,
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> MatchReport {
    let mut counts = OutcomeCounts::default();
    let mut per_token: BTreeMap<String, OutcomeCounts> = BTreeMap::new();
    let mut per_class: BTreeMap<AssetClass, OutcomeCounts> = BTreeMap::new();
    let mut truncation_exposure = 0;
    for (e, r) in events.iter().zip(&results) {
        let kind = r.kind();
        counts.add(kind);
        per_token
            .entry(spec.token_class(&e.token.symbol))
            .or_default()
            .add(kind);
        per_class.entry(spec.asset_type(&e.token)).or_default().add(kind);
        if kind == OutcomeKind::Unmatched && index.truncated.contains(&e.receiver) {
            truncation_exposure += 1;
        }
    }
    MatchReport {
        direction: cfg.direction,
        results,
        counts,
        per_token,
        per_class,
        truncation_exposure,
    }
}

/// One result per event, in input order.
pub fn match_all(
    events: &[BridgeEvent],
    transfers: &[ChainTransfer],
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> MatchReport {
    let index = build_candidate_index(transfers, spec);
    match_all_indexed(events, &index, cfg, spec)
}

pub fn match_all_indexed(
    events: &[BridgeEvent],
    index: &CandidateIndex,
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> MatchReport {
    let results = if cfg.exclusive_assignment {
        match_exclusive(events, index, cfg, spec)
    } else {
        events
            .iter()
            .map(|e| match_event(e, index, cfg, spec))
            .collect()
    };
    assemble(events, results, index, cfg, spec)
}

/// Events in ascending source time; an exact match consumes its transfer.
/// Events sharing a timestamp go in (block, log index, event id) order.
fn match_exclusive(
    events: &[BridgeEvent],
    index: &CandidateIndex,
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> Vec<MatchResult> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&events[a], &events[b]);
        (ea.timestamp, ea.block_number, ea.log_index, &ea.event_id, a)
            .cmp(&(eb.timestamp, eb.block_number, eb.log_index, &eb.event_id, b))
    });
    let mut consumed = BTreeSet::new();
    let mut results: Vec<Option<MatchResult>> = alloc::vec![None; events.len()];
    for i in order {
        let e = &events[i];
        let live: Vec<&(usize, ChainTransfer)> = index
            .survivors(e, cfg, spec)
            .filter(|(slot, _)| !consumed.contains(slot))
            .collect();
        if let [(slot, _)] = live.as_slice() {
            consumed.insert(*slot);
        }
        let survivors = live.into_iter().map(|(_, p)| p.clone()).collect();
        results[i] = Some(MatchResult::classify(e, survivors));
    }
    results
        .into_iter()
        .map(|r| r.expect("every event visited"))
        .collect()
}

/// Matches burns on the destination chain with exits on the source chain.
/// Fungible exits without the withdrawal selector are dropped first.
pub fn match_withdrawals(
    burns: &[BridgeEvent],
    exits: Vec<ExitRecord>,
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> MatchReport {
    let pool = exit_pool(exits, spec);
    let cfg = MatchConfig {
        direction: Direction::Withdrawal,
        ..*cfg
    };
    match_all(burns, &pool, &cfg, spec)
}
