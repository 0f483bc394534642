// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Tolerance sweeps: sample events, match them at each tolerance of a grid,
//! and find the tolerance with the highest exact-match rate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ArgumentError;
use crate::matching::{build_candidate_index, match_all_indexed, MatchConfig};
use crate::model::{BridgeEvent, ChainTransfer, Direction};
use crate::spec::BridgeSpec;

/// Sample size used when none is given.
pub const DEFAULT_SAMPLE_SIZE: usize = 10_000;

/// Uniform sample without replacement, returned in input order.
pub fn sample_events(
    events: &[BridgeEvent],
    n: usize,
    seed: u64,
) -> Result<Vec<BridgeEvent>, ArgumentError> {
    if n > events.len() {
        return Err(ArgumentError::SampleTooLarge {
            requested: n,
            available: events.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, events.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| events[i].clone()).collect())
}

/// `points` integer tolerances spaced geometrically from `lo` to `hi`
/// inclusive; duplicates from rounding are dropped.
pub fn geometric_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    if points <= 1 || hi <= lo {
        return alloc::vec![lo.max(1)];
    }
    let ratio = hi as f64 / lo as f64;
    let mut grid: Vec<u64> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            libm::round(lo as f64 * libm::pow(ratio, t)) as u64
        })
        .collect();
    grid[0] = lo;
    grid[points - 1] = hi;
    grid.dedup();
    grid
}

/// 1 minute to 2 hours for deposits, 10 minutes to 14 days for
/// withdrawals, 25 points each.
pub fn default_grid(direction: Direction) -> Vec<u64> {
    match direction {
        Direction::Deposit => geometric_grid(60, 120 * 60, 25),
        Direction::Withdrawal => geometric_grid(600, 14 * 86_400, 25),
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SweepPoint {
    pub tolerance_seconds: u64,
    pub exact_rate: f64,
    pub exact: u64,
    pub ambiguous: u64,
    pub unmatched: u64,
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    pub sample_size: usize,
    pub seed: Option<u64>,
}

/// Matches `sample` at every tolerance, holding the rest of `cfg` fixed.
pub fn sweep(
    sample: &[BridgeEvent],
    transfers: &[ChainTransfer],
    tolerances: &[u64],
    cfg: &MatchConfig,
    spec: &BridgeSpec,
) -> Result<SweepCurve, ArgumentError> {
    if tolerances.is_empty() {
        return Err(ArgumentError::EmptyGrid);
    }
    if tolerances[0] == 0 || tolerances.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ArgumentError::UnsortedGrid);
    }
    let index = build_candidate_index(transfers, spec);
    let mut points = Vec::with_capacity(tolerances.len());
    for &tol in tolerances {
        let cfg = cfg.with_tolerance(tol)?;
        let report = match_all_indexed(sample, &index, &cfg, spec);
        let c = report.counts;
        let total = c.total();
        points.push(SweepPoint {
            tolerance_seconds: tol,
            exact_rate: if total == 0 {
                0.0
            } else {
                c.exact as f64 / total as f64
            },
            exact: c.exact,
            ambiguous: c.ambiguous,
            unmatched: c.unmatched,
        });
    }
    Ok(SweepCurve {
        points,
        sample_size: sample.len(),
        seed: None,
    })
}

/// Groups events by token equivalence class, for per-token sweeps.
pub fn group_by_token(events: &[BridgeEvent], spec: &BridgeSpec) -> BTreeMap<String, Vec<BridgeEvent>> {
    let mut groups: BTreeMap<String, Vec<BridgeEvent>> = BTreeMap::new();
    for e in events {
        groups
            .entry(spec.token_class(&e.token.symbol))
            .or_default()
            .push(e.clone());
    }
    groups
}

/// Point with the highest exact rate; ties go to the smallest tolerance.
pub fn find_peak(curve: &SweepCurve) -> Option<SweepPoint> {
    let mut best: Option<SweepPoint> = None;
    for p in &curve.points {
        match best {
            Some(b) if p.exact_rate <= b.exact_rate => {}
            _ => best = Some(*p),
        }
    }
    best
}
