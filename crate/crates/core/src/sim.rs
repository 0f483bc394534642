// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Synthetic two-chain bridge traffic with known ground truth.
//!
//! Every generated event has exactly one true counterpart transfer that
//! satisfies all matching criteria, with a latency drawn from the scenario's
//! model. Noise transfers reuse a true receiver and token but always carry a
//! fresh amount or token id, so they can never pass the value criterion.
//! Collision transfers copy a true pair's receiver, token and value and land
//! after the true counterpart, at most one maximum latency later.
//! Withheld counterparts are dropped from the transfer set and their
//! receivers are flagged as truncated, the way a page-limited explorer
//! history would be.

use alloc::borrow::Cow;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ArgumentError;
use crate::hash::keccak256;
use crate::matching::{MatchRecord, OutcomeKind};
use crate::model::{
    AccountAddress, Amount, AssetClass, BridgeEvent, ChainLabel, ChainTransfer, Direction,
    Timestamp, TokenId, TokenKey, TxId,
};

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Uniform { lo: u64, hi: u64 },
    LogNormal { mu: f64, sigma: f64 },
    PointMass { value: u64 },
}

impl LatencyModel {
    /// Largest latency the model produces.
    pub fn max_seconds(&self) -> u64 {
        match *self {
            Self::Uniform { hi, .. } => hi,
            Self::PointMass { value } => value,
            Self::LogNormal { mu, sigma } => lognormal_cap(mu, sigma),
        }
    }

    pub fn min_seconds(&self) -> u64 {
        match *self {
            Self::Uniform { lo, .. } => lo,
            Self::PointMass { value } => value,
            Self::LogNormal { .. } => 1,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            Self::Uniform { lo, hi } => rng.random_range(lo..=hi),
            Self::PointMass { value } => value,
            Self::LogNormal { mu, sigma } => {
                // Box-Muller; u1 in (0, 1] keeps the log finite.
                let u1 = 1.0 - rng.random::<f64>();
                let u2 = rng.random::<f64>();
                let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
                let v = libm::round(libm::exp(mu + sigma * z));
                (v as u64).clamp(1, lognormal_cap(mu, sigma))
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Self::Uniform { lo, hi } if lo == 0 || hi < lo => {
                Err(format!("uniform latency needs 0 < lo <= hi, got [{lo}, {hi}]"))
            }
            Self::PointMass { value: 0 } => Err("point-mass latency must be positive".into()),
            Self::LogNormal { mu, sigma }
                if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 =>
            {
                Err(format!("log-normal latency needs finite mu and sigma > 0, got ({mu}, {sigma})"))
            }
            _ => Ok(()),
        }
    }
}

// Draws are clamped at four standard deviations above the log-mean.
fn lognormal_cap(mu: f64, sigma: f64) -> u64 {
    let cap = libm::ceil(libm::exp(mu + 4.0 * sigma));
    if cap >= u64::MAX as f64 {
        u64::MAX / 4
    } else {
        (cap as u64).max(1)
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct AssetMix {
    pub native: f64,
    pub fungible: f64,
    pub non_fungible: f64,
}

impl Default for AssetMix {
    fn default() -> Self {
        Self {
            native: 0.5,
            fungible: 0.35,
            non_fungible: 0.15,
        }
    }
}

impl AssetMix {
    pub fn only(class: AssetClass) -> Self {
        let mut mix = Self {
            native: 0.0,
            fungible: 0.0,
            non_fungible: 0.0,
        };
        match class {
            AssetClass::Native => mix.native = 1.0,
            AssetClass::Fungible => mix.fungible = 1.0,
            AssetClass::NonFungible => mix.non_fungible = 1.0,
        }
        mix
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> AssetClass {
        let total = self.native + self.fungible + self.non_fungible;
        let x = rng.random::<f64>() * total;
        if x < self.native {
            AssetClass::Native
        } else if x < self.native + self.fungible || self.non_fungible == 0.0 {
            AssetClass::Fungible
        } else {
            AssetClass::NonFungible
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficScenario {
    pub n_pairs: usize,
    pub asset_mix: AssetMix,
    pub latency: LatencyModel,
    /// Extra unrelated transfers to known receivers, per pair.
    pub noise_transfer_rate: f64,
    /// Pairs that get a second transfer copying receiver, token and value.
    pub value_collision_rate: f64,
    /// Pairs whose counterpart is withheld from the transfer set.
    pub missing_counterpart_rate: f64,
    /// Distinct receiver addresses; 0 means one per pair.
    pub address_pool_size: usize,
    pub seed: u64,
    pub start_timestamp: u64,
    /// Events are spread uniformly over this many seconds.
    pub span_seconds: u64,
    /// Destination-chain transfers between unrelated users of the same
    /// collection, per pair; only used for non-fungible graph studies.
    pub secondary_trade_rate: f64,
}

impl Default for TrafficScenario {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            asset_mix: AssetMix::default(),
            latency: LatencyModel::Uniform { lo: 300, hi: 900 },
            noise_transfer_rate: 0.0,
            value_collision_rate: 0.0,
            missing_counterpart_rate: 0.0,
            address_pool_size: 0,
            seed: 42,
            // 2022-09-01T00:00:00Z
            start_timestamp: 1_661_990_400,
            span_seconds: 30 * 86_400,
            secondary_trade_rate: 0.0,
        }
    }
}

impl TrafficScenario {
    /// Clean traffic: 1,000 pairs, latency uniform on [300, 900] s, seed 42.
    pub fn s0() -> Self {
        Self::default()
    }

    /// S0 plus 20% value collisions.
    pub fn s2() -> Self {
        Self {
            value_collision_rate: 0.2,
            seed: 7,
            ..Self::s0()
        }
    }

    /// S0 with 10% of counterparts withheld.
    pub fn s3() -> Self {
        Self {
            missing_counterpart_rate: 0.1,
            ..Self::s0()
        }
    }

    pub fn validate(&self) -> Result<(), ArgumentError> {
        let bad = |m: String| Err(ArgumentError::InvalidScenario(m));
        for (name, rate) in [
            ("noise_transfer_rate", self.noise_transfer_rate),
            ("value_collision_rate", self.value_collision_rate),
            ("missing_counterpart_rate", self.missing_counterpart_rate),
            ("secondary_trade_rate", self.secondary_trade_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        let m = &self.asset_mix;
        let weights = [m.native, m.fungible, m.non_fungible];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return bad("asset mix weights must be non-negative with a positive sum".into());
        }
        if let Err(m) = self.latency.validate() {
            return bad(m);
        }
        if self.span_seconds == 0 {
            return bad("span_seconds must be positive".into());
        }
        Ok(())
    }

    fn pool_size(&self) -> usize {
        if self.address_pool_size == 0 {
            self.n_pairs.max(1)
        } else {
            self.address_pool_size
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum TruthTarget {
    Transfer(TxId),
    Withheld,
}

impl core::fmt::Display for TruthTarget {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Transfer(tx) => core::fmt::Display::fmt(tx, f),
            Self::Withheld => f.write_str("withheld"),
        }
    }
}

impl FromStr for TruthTarget {
    type Err = crate::error::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "withheld" {
            Ok(Self::Withheld)
        } else {
            s.parse().map(Self::Transfer)
        }
    }
}

impl Serialize for TruthTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TruthTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = Cow::<'de, str>::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One truth entry as written to truth files.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TruthRecord {
    pub event_id: String,
    pub tx_id: TruthTarget,
}

pub type GroundTruth = BTreeMap<String, TruthTarget>;

#[derive(Clone, PartialEq, Debug, Default)]
pub struct SimOutput {
    /// Sorted by timestamp; ids ascend with time.
    pub events: Vec<BridgeEvent>,
    /// Sorted by (timestamp, tx id).
    pub transfers: Vec<ChainTransfer>,
    pub truth: GroundTruth,
}

impl SimOutput {
    pub fn truth_records(&self) -> Vec<TruthRecord> {
        self.truth
            .iter()
            .map(|(event_id, tx_id)| TruthRecord {
                event_id: event_id.clone(),
                tx_id: *tx_id,
            })
            .collect()
    }
}

const FUNGIBLE_SYMBOLS: [&str; 3] = ["USDC", "USDT", "DAI"];
const NFT_SYMBOLS: [&str; 2] = ["KONGZ", "LAND"];

struct Pair {
    class: AssetClass,
    symbol_index: usize,
    receiver: AccountAddress,
    timestamp: u64,
    latency: u64,
    amount: Option<Amount>,
    token_id: Option<TokenId>,
}

struct Tokens {
    event: TokenKey,
    transfer: TokenKey,
}

fn tokens_for(class: AssetClass, symbol_index: usize, direction: Direction) -> Tokens {
    match class {
        AssetClass::Native => {
            let native = TokenKey::new("ETH", AssetClass::Native);
            let wrapped = TokenKey::new("WETH", AssetClass::Fungible);
            match direction {
                Direction::Deposit => Tokens {
                    event: native,
                    transfer: wrapped,
                },
                Direction::Withdrawal => Tokens {
                    event: wrapped,
                    transfer: native,
                },
            }
        }
        AssetClass::Fungible => {
            let t = TokenKey::new(FUNGIBLE_SYMBOLS[symbol_index], AssetClass::Fungible);
            Tokens {
                event: t.clone(),
                transfer: t,
            }
        }
        AssetClass::NonFungible => {
            let t = TokenKey::new(NFT_SYMBOLS[symbol_index], AssetClass::NonFungible);
            Tokens {
                event: t.clone(),
                transfer: t,
            }
        }
    }
}

struct Ids {
    seed: u64,
    direction: Direction,
}

impl Ids {
    fn tx(&self, kind: &str, n: usize) -> TxId {
        let text = format!("bridgetrace-sim/{}/{}/{kind}/{n}", self.seed, self.direction);
        TxId(keccak256(text.as_bytes()))
    }
}

struct ValueSource {
    amounts: BTreeSet<Amount>,
    token_ids: BTreeSet<(usize, TokenId)>,
}

impl ValueSource {
    fn amount(&mut self, rng: &mut ChaCha8Rng) -> Amount {
        loop {
            // 1e12 .. 1e24 base units
            let v = Amount::from_u128(rng.random_range(1_000_000_000_000u128..1_000_000_000_000_000_000_000_000));
            if self.amounts.insert(v) {
                return v;
            }
        }
    }

    fn token_id(&mut self, symbol_index: usize, rng: &mut ChaCha8Rng) -> TokenId {
        loop {
            let v = TokenId::from(rng.random_range(0..1_000_000_000u64));
            if self.token_ids.insert((symbol_index, v)) {
                return v;
            }
        }
    }
}

/// Generates events, counterpart transfers and ground truth. Deterministic
/// for (scenario, direction).
pub fn generate(scenario: &TrafficScenario, direction: Direction) -> Result<SimOutput, ArgumentError> {
    scenario.validate()?;
    let n = scenario.n_pairs;
    if n == 0 {
        return Ok(SimOutput::default());
    }
    let salt = match direction {
        Direction::Deposit => 0x6465_706f_7369_7400,
        Direction::Withdrawal => 0x7769_7468_6472_6177,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ salt);
    let ids = Ids {
        seed: scenario.seed,
        direction,
    };
    let (event_chain, transfer_chain) = match direction {
        Direction::Deposit => (ChainLabel::new("ethereum"), ChainLabel::new("polygon")),
        Direction::Withdrawal => (ChainLabel::new("polygon"), ChainLabel::new("ethereum")),
    };

    let pool: Vec<AccountAddress> = (0..scenario.pool_size())
        .map(|_| {
            let mut a = [0u8; 20];
            rng.fill(&mut a[..]);
            AccountAddress(a)
        })
        .collect();
    let mut values = ValueSource {
        amounts: BTreeSet::new(),
        token_ids: BTreeSet::new(),
    };

    let mut pairs: Vec<Pair> = (0..n)
        .map(|_| {
            let class = scenario.asset_mix.pick(&mut rng);
            let symbol_index = match class {
                AssetClass::Native => 0,
                AssetClass::Fungible => rng.random_range(0..FUNGIBLE_SYMBOLS.len()),
                AssetClass::NonFungible => rng.random_range(0..NFT_SYMBOLS.len()),
            };
            let receiver = pool[rng.random_range(0..pool.len())];
            let timestamp = scenario.start_timestamp + rng.random_range(0..scenario.span_seconds);
            let latency = scenario.latency.sample(&mut rng);
            let (amount, token_id) = match class {
                AssetClass::NonFungible => (None, Some(values.token_id(symbol_index, &mut rng))),
                _ => (Some(values.amount(&mut rng)), None),
            };
            Pair {
                class,
                symbol_index,
                receiver,
                timestamp,
                latency,
                amount,
                token_id,
            }
        })
        .collect();
    pairs.sort_by_key(|p| p.timestamp);

    let withheld: BTreeSet<usize> = sample(&mut rng, n, round_count(scenario.missing_counterpart_rate, n))
        .into_iter()
        .collect();

    let mut events = Vec::with_capacity(n);
    let mut transfers = Vec::with_capacity(n);
    let mut truth = GroundTruth::new();
    let block_of = |chain: &ChainLabel, ts: u64| -> u64 {
        if chain.as_str() == "ethereum" {
            ts / 12
        } else {
            ts / 2
        }
    };

    for (i, p) in pairs.iter().enumerate() {
        let tokens = tokens_for(p.class, p.symbol_index, direction);
        let event_id = format!("sim-{direction}-{i:06}");
        events.push(BridgeEvent {
            event_id: event_id.clone(),
            tx_id: ids.tx("event", i),
            log_index: 0,
            receiver: p.receiver,
            token: tokens.event.clone(),
            amount: p.amount,
            token_ids: p.token_id.into_iter().collect(),
            timestamp: Timestamp(p.timestamp),
            block_number: block_of(&event_chain, p.timestamp),
            direction,
            chain: event_chain.clone(),
        });
        if withheld.contains(&i) {
            truth.insert(event_id, TruthTarget::Withheld);
            continue;
        }
        let tx_id = ids.tx("pair", i);
        let ts = p.timestamp + p.latency;
        transfers.push(ChainTransfer {
            tx_id,
            to_address: p.receiver,
            from_address: AccountAddress::ZERO,
            token: tokens.transfer,
            amount: p.amount,
            token_id: p.token_id,
            timestamp: Timestamp(ts),
            block_number: block_of(&transfer_chain, ts),
            chain: transfer_chain.clone(),
            truncated: false,
        });
        truth.insert(event_id, TruthTarget::Transfer(tx_id));
    }

    let max_latency = scenario.latency.max_seconds();
    let noise_count = round_count(scenario.noise_transfer_rate, n);
    for k in 0..noise_count {
        let p = &pairs[rng.random_range(0..n)];
        let tokens = tokens_for(p.class, p.symbol_index, direction);
        let (amount, token_id) = match p.class {
            AssetClass::NonFungible => (None, Some(values.token_id(p.symbol_index, &mut rng))),
            _ => (Some(values.amount(&mut rng)), None),
        };
        let ts = p.timestamp + rng.random_range(0..=max_latency.saturating_mul(2));
        transfers.push(ChainTransfer {
            tx_id: ids.tx("noise", k),
            to_address: p.receiver,
            from_address: AccountAddress::ZERO,
            token: tokens.transfer,
            amount,
            token_id,
            timestamp: Timestamp(ts),
            block_number: block_of(&transfer_chain, ts),
            chain: transfer_chain.clone(),
            truncated: false,
        });
    }

    let kept: Vec<usize> = (0..n).filter(|i| !withheld.contains(i)).collect();
    let collisions = round_count(scenario.value_collision_rate, n).min(kept.len());
    let mut collided: Vec<usize> = sample(&mut rng, kept.len(), collisions)
        .into_iter()
        .map(|k| kept[k])
        .collect();
    collided.sort_unstable();
    for (k, i) in collided.into_iter().enumerate() {
        let p = &pairs[i];
        let tokens = tokens_for(p.class, p.symbol_index, direction);
        // Lands strictly after the true counterpart, at most one maximum
        // latency later.
        let ts = p.timestamp + p.latency + rng.random_range(1..=max_latency.max(1));
        transfers.push(ChainTransfer {
            tx_id: ids.tx("collision", k),
            to_address: p.receiver,
            from_address: AccountAddress::ZERO,
            token: tokens.transfer,
            amount: p.amount,
            token_id: p.token_id,
            timestamp: Timestamp(ts),
            block_number: block_of(&transfer_chain, ts),
            chain: transfer_chain.clone(),
            truncated: false,
        });
    }

    let nft_pairs: Vec<usize> = (0..n)
        .filter(|i| pairs[*i].class == AssetClass::NonFungible && !withheld.contains(i))
        .collect();
    let trades = if nft_pairs.is_empty() {
        0
    } else {
        round_count(scenario.secondary_trade_rate, n)
    };
    for k in 0..trades {
        let p = &pairs[nft_pairs[rng.random_range(0..nft_pairs.len())]];
        let tokens = tokens_for(p.class, p.symbol_index, direction);
        let buyer = pool[rng.random_range(0..pool.len())];
        let ts = p.timestamp + p.latency + rng.random_range(1..=scenario.span_seconds);
        transfers.push(ChainTransfer {
            tx_id: ids.tx("trade", k),
            to_address: buyer,
            from_address: p.receiver,
            token: tokens.transfer,
            amount: None,
            token_id: Some(values.token_id(p.symbol_index, &mut rng)),
            timestamp: Timestamp(ts),
            block_number: block_of(&transfer_chain, ts),
            chain: transfer_chain.clone(),
            truncated: false,
        });
    }

    // A truncated history still returned a full page, so every withheld
    // receiver keeps at least one flagged transfer.
    let truncated_receivers: BTreeSet<AccountAddress> =
        withheld.iter().map(|i| pairs[*i].receiver).collect();
    for (k, addr) in truncated_receivers.iter().enumerate() {
        if transfers.iter().any(|t| t.to_address == *addr) {
            continue;
        }
        let i = *withheld
            .iter()
            .find(|i| pairs[**i].receiver == *addr)
            .expect("receiver came from a withheld pair");
        let p = &pairs[i];
        let tokens = tokens_for(p.class, p.symbol_index, direction);
        let (amount, token_id) = match p.class {
            AssetClass::NonFungible => (None, Some(values.token_id(p.symbol_index, &mut rng))),
            _ => (Some(values.amount(&mut rng)), None),
        };
        let ts = p.timestamp + p.latency;
        transfers.push(ChainTransfer {
            tx_id: ids.tx("filler", k),
            to_address: *addr,
            from_address: AccountAddress::ZERO,
            token: tokens.transfer,
            amount,
            token_id,
            timestamp: Timestamp(ts),
            block_number: block_of(&transfer_chain, ts),
            chain: transfer_chain.clone(),
            truncated: false,
        });
    }
    for t in &mut transfers {
        if truncated_receivers.contains(&t.to_address) {
            t.truncated = true;
        }
    }
    transfers.sort_by_key(|a| (a.timestamp, a.tx_id));

    Ok(SimOutput {
        events,
        transfers,
        truth,
    })
}

fn round_count(rate: f64, n: usize) -> usize {
    (libm::round(rate * n as f64) as usize).min(n)
}

#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct Score {
    /// Correct exact matches over all exact matches.
    pub precision: Option<f64>,
    /// Correct exact matches over all truth entries; withheld ones count
    /// as misses.
    pub recall: Option<f64>,
    pub ambiguous_rate: Option<f64>,
    pub exact: u64,
    pub correct: u64,
    pub ambiguous: u64,
    pub total: u64,
    pub recoverable: u64,
}

/// Scores match records against ground truth. Both must cover the same
/// event ids.
pub fn score(records: &[MatchRecord], truth: &GroundTruth) -> Result<Score, ArgumentError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !truth.contains_key(&r.event_id) {
            return Err(ArgumentError::EventSetMismatch(format!(
                "{} has no truth entry",
                r.event_id
            )));
        }
        if !seen.insert(r.event_id.as_str()) {
            return Err(ArgumentError::EventSetMismatch(format!(
                "{} appears twice in the results",
                r.event_id
            )));
        }
    }
    if let Some(missing) = truth.keys().find(|k| !seen.contains(k.as_str())) {
        return Err(ArgumentError::EventSetMismatch(format!(
            "{missing} has no result"
        )));
    }

    let mut s = Score {
        total: records.len() as u64,
        recoverable: truth
            .values()
            .filter(|t| matches!(t, TruthTarget::Transfer(_)))
            .count() as u64,
        ..Score::default()
    };
    for r in records {
        match r.outcome {
            OutcomeKind::Exact => {
                s.exact += 1;
                if let (Some(TruthTarget::Transfer(want)), Some(got)) =
                    (truth.get(&r.event_id), r.counterpart)
                {
                    if *want == got {
                        s.correct += 1;
                    }
                }
            }
            OutcomeKind::Ambiguous => s.ambiguous += 1,
            OutcomeKind::Unmatched => {}
        }
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    s.precision = ratio(s.correct, s.exact);
    s.recall = ratio(s.correct, s.total);
    s.ambiguous_rate = ratio(s.ambiguous, s.total);
    Ok(s)
}

/// Renders an optional metric, `n/a` when undefined.
pub fn metric_string(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}
