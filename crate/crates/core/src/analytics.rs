// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Descriptive series and tables over matched data.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use time::{Date, OffsetDateTime};

use crate::error::ArgumentError;
use crate::matching::{format_rate, MatchRecord, MatchReport, OutcomeCounts, OutcomeKind};
use crate::model::{normalize_symbol, AccountAddress, AssetClass, BridgeEvent, ChainTransfer, Direction, Timestamp, TxId};
use crate::spec::BridgeSpec;

/// Default multiple of the trailing mean that marks a ratio spike.
pub const DEFAULT_SPIKE_FACTOR: f64 = 3.0;
const TRAILING_DAYS: i64 = 7;

/// UTC calendar day of a unix timestamp.
pub fn utc_date(ts: Timestamp) -> Date {
    let secs = i64::try_from(ts.0).unwrap_or(i64::MAX);
    OffsetDateTime::from_unix_timestamp(secs)
        .map(|t| t.date())
        .unwrap_or(Date::MAX)
}

fn utc_month(ts: Timestamp) -> String {
    let d = utc_date(ts);
    format!("{:04}-{:02}", d.year(), u8::from(d.month()))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Statistic {
    Median,
    Mean,
    P90,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Median => "median",
            Statistic::Mean => "mean",
            Statistic::P90 => "p90",
        }
    }

    /// Median takes the lower middle for even counts; P90 is nearest-rank.
    pub fn apply(self, values: &mut [i64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        values.sort_unstable();
        let n = values.len();
        Some(match self {
            Statistic::Median => values[(n - 1) / 2] as f64,
            Statistic::Mean => values.iter().map(|&v| v as f64).sum::<f64>() / n as f64,
            Statistic::P90 => values[(9 * n).div_ceil(10) - 1] as f64,
        })
    }
}

impl FromStr for Statistic {
    type Err = ArgumentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(Statistic::Median),
            "mean" => Ok(Statistic::Mean),
            "p90" => Ok(Statistic::P90),
            _ => Err(ArgumentError::Unknown {
                what: "statistic",
                value: s.to_string(),
            }),
        }
    }
}

/// Source-side timestamp and elapsed time of one exact match.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TimeCostSample {
    pub source_timestamp: Timestamp,
    pub elapsed_seconds: i64,
}

/// Exact matches joined back to their events by id.
pub fn samples_from_records(records: &[MatchRecord], events: &[BridgeEvent]) -> Vec<TimeCostSample> {
    let by_id: BTreeMap<&str, &BridgeEvent> =
        events.iter().map(|e| (e.event_id.as_str(), e)).collect();
    records
        .iter()
        .filter(|r| r.outcome == OutcomeKind::Exact)
        .filter_map(|r| {
            let e = by_id.get(r.event_id.as_str())?;
            Some(TimeCostSample {
                source_timestamp: e.timestamp,
                elapsed_seconds: r.elapsed_seconds?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct DailyPoint {
    pub date: Date,
    pub value: f64,
    pub sample_count: u64,
}

#[derive(Clone, PartialEq, Debug)]
pub struct DailySeries {
    pub statistic: Statistic,
    pub points: Vec<DailyPoint>,
}

/// Per-UTC-day statistic of elapsed time; days without samples are omitted.
pub fn time_cost_series(samples: &[TimeCostSample], statistic: Statistic) -> DailySeries {
    let mut days: BTreeMap<Date, Vec<i64>> = BTreeMap::new();
    for s in samples {
        days.entry(utc_date(s.source_timestamp))
            .or_default()
            .push(s.elapsed_seconds);
    }
    let points = days
        .into_iter()
        .filter_map(|(date, mut values)| {
            let sample_count = values.len() as u64;
            statistic.apply(&mut values).map(|value| DailyPoint {
                date,
                value,
                sample_count,
            })
        })
        .collect();
    DailySeries { statistic, points }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct FlowPoint {
    pub date: Date,
    pub deposits: u64,
    pub withdrawals: u64,
    /// `None` when there were no deposits that day.
    pub ratio: Option<f64>,
    pub spike: bool,
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct FlowSeries {
    pub points: Vec<FlowPoint>,
}

/// Daily deposit and withdrawal counts with their ratio. A day is flagged
/// when its ratio exceeds `spike_factor` times the mean defined ratio of the
/// preceding seven calendar days.
pub fn flow_series(deposits: &[BridgeEvent], withdrawals: &[BridgeEvent], spike_factor: f64) -> FlowSeries {
    let mut days: BTreeMap<Date, (u64, u64)> = BTreeMap::new();
    for e in deposits {
        days.entry(utc_date(e.timestamp)).or_default().0 += 1;
    }
    for e in withdrawals {
        days.entry(utc_date(e.timestamp)).or_default().1 += 1;
    }
    let ratios: BTreeMap<Date, Option<f64>> = days
        .iter()
        .map(|(d, &(dep, wd))| (*d, (dep > 0).then(|| wd as f64 / dep as f64)))
        .collect();
    let points = days
        .iter()
        .map(|(&date, &(deposits, withdrawals))| {
            let ratio = ratios[&date];
            let window_start = date
                .to_julian_day()
                .saturating_sub(TRAILING_DAYS as i32);
            let trailing: Vec<f64> = ratios
                .range(..date)
                .filter(|(d, _)| d.to_julian_day() >= window_start)
                .filter_map(|(_, r)| *r)
                .collect();
            let spike = match (ratio, trailing.is_empty()) {
                (Some(r), false) => {
                    let mean = trailing.iter().sum::<f64>() / trailing.len() as f64;
                    r > spike_factor * mean
                }
                _ => false,
            };
            FlowPoint {
                date,
                deposits,
                withdrawals,
                ratio,
                spike,
            }
        })
        .collect();
    FlowSeries { points }
}

/// Events whose record is an exact match, in input order.
pub fn retain_exact(events: &[BridgeEvent], records: &[MatchRecord]) -> Vec<BridgeEvent> {
    let exact: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.outcome == OutcomeKind::Exact)
        .map(|r| r.event_id.as_str())
        .collect();
    events
        .iter()
        .filter(|e| exact.contains(e.event_id.as_str()))
        .cloned()
        .collect()
}

#[derive(Clone, PartialEq, Debug)]
pub struct CompositionRow {
    pub symbol: String,
    pub count: u64,
    pub share: f64,
}

/// Event counts per normalized symbol, largest first.
pub fn token_composition(events: &[BridgeEvent]) -> Vec<CompositionRow> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for e in events {
        *counts.entry(normalize_symbol(&e.token.symbol)).or_default() += 1;
    }
    let total = events.len() as f64;
    let mut rows: Vec<CompositionRow> = counts
        .into_iter()
        .map(|(symbol, count)| CompositionRow {
            symbol,
            count,
            share: count as f64 / total,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.symbol.cmp(&b.symbol)));
    rows
}

/// Integer with comma thousands separators.
pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct RateCell {
    pub exact: u64,
    pub total: u64,
}

impl fmt::Display for RateCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} = {}",
            group_thousands(self.exact),
            group_thousands(self.total),
            format_rate(self.exact, self.total)
        )
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MatchRateRow {
    pub token_type: String,
    pub deposit: RateCell,
    pub withdrawal: RateCell,
}

/// Outcome counts keyed by (direction, table row), from result records
/// joined to their events. Records without an event are skipped.
pub type RateTallies = BTreeMap<(Direction, AssetClass), OutcomeCounts>;

pub fn tally_records(records: &[MatchRecord], events: &[BridgeEvent], spec: &BridgeSpec) -> RateTallies {
    let by_id: BTreeMap<&str, &BridgeEvent> =
        events.iter().map(|e| (e.event_id.as_str(), e)).collect();
    let mut tallies = RateTallies::new();
    for r in records {
        let Some(e) = by_id.get(r.event_id.as_str()) else {
            continue;
        };
        let c = tallies
            .entry((e.direction, spec.asset_type(&e.token)))
            .or_default();
        match r.outcome {
            OutcomeKind::Exact => c.exact += 1,
            OutcomeKind::Ambiguous => c.ambiguous += 1,
            OutcomeKind::Unmatched => c.unmatched += 1,
        }
    }
    tallies
}

/// One row per asset type, in Ether, ERC20, ERC721 order.
pub fn match_rate_rows(tallies: &RateTallies) -> Vec<MatchRateRow> {
    let cell = |direction: Direction, class: AssetClass| {
        tallies
            .get(&(direction, class))
            .map(|c| RateCell {
                exact: c.exact,
                total: c.total(),
            })
            .unwrap_or_default()
    };
    [AssetClass::Native, AssetClass::Fungible, AssetClass::NonFungible]
        .into_iter()
        .map(|class| MatchRateRow {
            token_type: class.token_type_label().to_string(),
            deposit: cell(Direction::Deposit, class),
            withdrawal: cell(Direction::Withdrawal, class),
        })
        .collect()
}

/// Tallies of a deposit report and a withdrawal report side by side.
pub fn report_tallies(deposit: &MatchReport, withdrawal: &MatchReport) -> RateTallies {
    let mut tallies = RateTallies::new();
    for (direction, report) in [(Direction::Deposit, deposit), (Direction::Withdrawal, withdrawal)] {
        for (class, counts) in &report.per_class {
            tallies.insert((direction, *class), *counts);
        }
    }
    tallies
}

pub fn render_match_rate_table(rows: &[MatchRateRow]) -> String {
    let mut out = String::from("Token Type | Match Rate of Deposits | Match Rate of Withdrawals\n");
    for r in rows {
        out.push_str(&format!("{} | {} | {}\n", r.token_type, r.deposit, r.withdrawal));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum EdgeKind {
    IntraChain,
    CrossChain,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::IntraChain => "intra_chain",
            EdgeKind::CrossChain => "cross_chain",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GraphEdge {
    pub from: AccountAddress,
    pub to: AccountAddress,
    pub tx_id: TxId,
    pub timestamp: Timestamp,
    pub kind: EdgeKind,
    pub chain: String,
}

#[derive(Clone, PartialEq, Debug)]
pub struct MonthlyActivity {
    /// `YYYY-MM`, UTC.
    pub month: String,
    pub active_addresses: u64,
    pub transactions: u64,
    pub cross_chain: u64,
    /// Change in transactions relative to the previous listed month.
    pub growth_rate: Option<f64>,
}

impl MonthlyActivity {
    pub fn cross_chain_share(&self) -> Option<f64> {
        (self.transactions > 0).then(|| self.cross_chain as f64 / self.transactions as f64)
    }
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct ChainGraph {
    pub edges: Vec<GraphEdge>,
    pub months: Vec<MonthlyActivity>,
}

impl ChainGraph {
    /// Cross-chain edges over all edges; transfer-count denominator.
    pub fn cross_chain_share(&self) -> Option<f64> {
        let cross = self.edges.iter().filter(|e| e.kind == EdgeKind::CrossChain).count();
        (!self.edges.is_empty()).then(|| cross as f64 / self.edges.len() as f64)
    }

    pub fn active_addresses(&self) -> u64 {
        active(self.edges.iter())
    }
}

fn active<'a>(edges: impl Iterator<Item = &'a GraphEdge>) -> u64 {
    let mut set = BTreeSet::new();
    for e in edges {
        set.insert(e.from);
        set.insert(e.to);
    }
    set.remove(&AccountAddress::ZERO);
    set.len() as u64
}

/// Transfer graph of one token class on every chain present in `transfers`.
/// Edges whose transaction is either half of an exact match are cross-chain.
pub fn collection_graph(
    transfers: &[ChainTransfer],
    events: &[BridgeEvent],
    records: &[MatchRecord],
    token_filter: &str,
    spec: &BridgeSpec,
) -> BTreeMap<String, ChainGraph> {
    let class = spec.token_class(token_filter);
    let event_tx: BTreeMap<&str, TxId> = events
        .iter()
        .map(|e| (e.event_id.as_str(), e.tx_id))
        .collect();
    let mut matched: BTreeSet<TxId> = BTreeSet::new();
    for r in records.iter().filter(|r| r.outcome == OutcomeKind::Exact) {
        if let Some(tx) = event_tx.get(r.event_id.as_str()) {
            matched.insert(*tx);
        }
        if let Some(tx) = r.counterpart {
            matched.insert(tx);
        }
    }

    let mut graphs: BTreeMap<String, ChainGraph> = BTreeMap::new();
    for t in transfers
        .iter()
        .filter(|t| spec.token_class(&t.token.symbol) == class)
    {
        let kind = if matched.contains(&t.tx_id) {
            EdgeKind::CrossChain
        } else {
            EdgeKind::IntraChain
        };
        graphs
            .entry(t.chain.as_str().to_string())
            .or_default()
            .edges
            .push(GraphEdge {
                from: t.from_address,
                to: t.to_address,
                tx_id: t.tx_id,
                timestamp: t.timestamp,
                kind,
                chain: t.chain.as_str().to_string(),
            });
    }
    for graph in graphs.values_mut() {
        graph
            .edges
            .sort_by_key(|a| (a.timestamp, a.tx_id, a.from, a.to));
        graph.months = monthly(&graph.edges);
    }
    graphs
}

fn monthly(edges: &[GraphEdge]) -> Vec<MonthlyActivity> {
    let mut by_month: BTreeMap<String, Vec<&GraphEdge>> = BTreeMap::new();
    for e in edges {
        by_month.entry(utc_month(e.timestamp)).or_default().push(e);
    }
    let mut out: Vec<MonthlyActivity> = Vec::with_capacity(by_month.len());
    for (month, edges) in by_month {
        let transactions = edges.len() as u64;
        let growth_rate = out
            .last()
            .filter(|p| p.transactions > 0)
            .map(|p| (transactions as f64 - p.transactions as f64) / p.transactions as f64);
        out.push(MonthlyActivity {
            month,
            active_addresses: active(edges.iter().copied()),
            transactions,
            cross_chain: edges.iter().filter(|e| e.kind == EdgeKind::CrossChain).count() as u64,
            growth_rate,
        });
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LatencyFlag {
    /// Exact match whose elapsed time reached the threshold.
    Slow,
    /// Unmatched withdrawal at least the threshold old.
    PossiblyUnclaimed,
}

impl LatencyFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            LatencyFlag::Slow => "slow",
            LatencyFlag::PossiblyUnclaimed => "possibly unclaimed",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LatencyEntry {
    pub event_id: String,
    pub elapsed_seconds: i64,
    pub flag: LatencyFlag,
}

/// Slow exact matches, longest first, followed by unmatched withdrawals
/// older than the threshold at `as_of`, oldest first.
pub fn long_latency_report(
    records: &[MatchRecord],
    events: &[BridgeEvent],
    threshold_seconds: u64,
    as_of: Timestamp,
) -> Result<Vec<LatencyEntry>, ArgumentError> {
    if threshold_seconds == 0 {
        return Err(ArgumentError::ZeroThreshold);
    }
    let threshold = i64::try_from(threshold_seconds).unwrap_or(i64::MAX);
    let by_id: BTreeMap<&str, &BridgeEvent> =
        events.iter().map(|e| (e.event_id.as_str(), e)).collect();

    let mut slow: Vec<LatencyEntry> = records
        .iter()
        .filter(|r| r.outcome == OutcomeKind::Exact)
        .filter_map(|r| {
            let elapsed = r.elapsed_seconds?;
            (elapsed >= threshold).then(|| LatencyEntry {
                event_id: r.event_id.clone(),
                elapsed_seconds: elapsed,
                flag: LatencyFlag::Slow,
            })
        })
        .collect();
    slow.sort_by(|a, b| b.elapsed_seconds.cmp(&a.elapsed_seconds).then_with(|| a.event_id.cmp(&b.event_id)));

    let mut unclaimed: Vec<LatencyEntry> = records
        .iter()
        .filter(|r| r.outcome == OutcomeKind::Unmatched)
        .filter_map(|r| {
            let e = by_id.get(r.event_id.as_str())?;
            if e.direction != Direction::Withdrawal {
                return None;
            }
            let age = as_of.signed_since(e.timestamp);
            (age >= threshold).then(|| LatencyEntry {
                event_id: r.event_id.clone(),
                elapsed_seconds: age,
                flag: LatencyFlag::PossiblyUnclaimed,
            })
        })
        .collect();
    unclaimed.sort_by(|a, b| b.elapsed_seconds.cmp(&a.elapsed_seconds).then_with(|| a.event_id.cmp(&b.event_id)));

    slow.extend(unclaimed);
    Ok(slow)
}
