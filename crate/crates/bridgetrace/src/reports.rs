// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! CSV renderings of tuning curves and analytics series.
//!
//! Every writer emits its header even when there are no rows, and renders
//! floats with a fixed number of decimals so equal inputs give equal bytes.

use bridgetrace_core::analytics::{
    ChainGraph, CompositionRow, DailySeries, FlowSeries, LatencyEntry,
};
use bridgetrace_core::tuning::SweepCurve;

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

fn render<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn sweep_csv(curve: &SweepCurve) -> Vec<u8> {
    render(
        ["tolerance_seconds", "exact_rate", "exact", "ambiguous", "unmatched"],
        curve.points.iter().map(|p| {
            [
                p.tolerance_seconds.to_string(),
                fixed(p.exact_rate),
                p.exact.to_string(),
                p.ambiguous.to_string(),
                p.unmatched.to_string(),
            ]
        }),
    )
}

pub fn time_cost_csv(series: &DailySeries) -> Vec<u8> {
    render(
        ["date", "statistic", "value_seconds", "sample_count"],
        series.points.iter().map(|p| {
            [
                p.date.to_string(),
                series.statistic.as_str().to_string(),
                fixed(p.value),
                p.sample_count.to_string(),
            ]
        }),
    )
}

pub fn flows_csv(series: &FlowSeries) -> Vec<u8> {
    render(
        ["date", "deposits", "withdrawals", "ratio", "spike"],
        series.points.iter().map(|p| {
            [
                p.date.to_string(),
                p.deposits.to_string(),
                p.withdrawals.to_string(),
                opt(p.ratio),
                p.spike.to_string(),
            ]
        }),
    )
}

pub fn composition_csv(rows: &[CompositionRow]) -> Vec<u8> {
    render(
        ["symbol", "count", "share"],
        rows.iter()
            .map(|r| [r.symbol.clone(), r.count.to_string(), fixed(r.share)]),
    )
}

pub fn graph_edges_csv(graph: &ChainGraph) -> Vec<u8> {
    render(
        ["from", "to", "tx_id", "timestamp", "kind", "chain"],
        graph.edges.iter().map(|e| {
            [
                e.from.to_string(),
                e.to.to_string(),
                e.tx_id.to_string(),
                e.timestamp.0.to_string(),
                e.kind.as_str().to_string(),
                e.chain.clone(),
            ]
        }),
    )
}

pub fn graph_months_csv(graph: &ChainGraph) -> Vec<u8> {
    render(
        ["month", "active_addresses", "transactions", "cross_chain", "cross_chain_share", "growth_rate"],
        graph.months.iter().map(|m| {
            [
                m.month.clone(),
                m.active_addresses.to_string(),
                m.transactions.to_string(),
                m.cross_chain.to_string(),
                opt(m.cross_chain_share()),
                opt(m.growth_rate),
            ]
        }),
    )
}

pub fn latency_csv(entries: &[LatencyEntry]) -> Vec<u8> {
    render(
        ["event_id", "elapsed_seconds", "flag"],
        entries.iter().map(|e| {
            [
                e.event_id.clone(),
                e.elapsed_seconds.to_string(),
                e.flag.as_str().to_string(),
            ]
        }),
    )
}
