// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

use std::collections::BTreeSet;

use bridgetrace_core::decode::{
    decode_log, decode_log_in_tx, encode_log, explode_batch, EventFields, HexBytes, LogMeta, RawLog,
    RawTransaction,
};
use bridgetrace_core::hash::{event_topic, keccak256};
use bridgetrace_core::matching::{match_all, MatchConfig, MatchRecord, OutcomeKind};
use bridgetrace_core::spec::{default_polygon_pos_spec, token_equivalent, BridgeSpec, FieldRole, Slot};
use bridgetrace_core::{
    canonicalize_address, AccountAddress, Amount, AssetClass, BridgeEvent, ChainLabel, ChainTransfer,
    Direction, Timestamp, TokenId, TokenKey, TxId, Word,
};
use proptest::prelude::*;
use ruint::aliases::U256;
use sha3::{Digest, Keccak256};

// ---------- independent matching oracle ----------

fn oracle_norm(s: &str) -> String {
    s.trim().to_uppercase()
}

/// Symbol equivalence by repeated closure over the configured pairs.
fn oracle_equivalent(a: &str, b: &str, spec: &BridgeSpec) -> bool {
    let (a, b) = (oracle_norm(a), oracle_norm(b));
    let mut reach: BTreeSet<String> = BTreeSet::from([a]);
    loop {
        let before = reach.len();
        for (x, y) in spec.token_equivalences() {
            let (x, y) = (oracle_norm(x), oracle_norm(y));
            if reach.contains(&x) || reach.contains(&y) {
                reach.insert(x);
                reach.insert(y);
            }
        }
        if reach.len() == before {
            return reach.contains(&b);
        }
    }
}

fn is_valued(c: AssetClass) -> bool {
    matches!(c, AssetClass::Native | AssetClass::Fungible)
}

fn oracle_pair(e: &BridgeEvent, t: &ChainTransfer, tol: u64, causal: bool, strict: bool, spec: &BridgeSpec) -> bool {
    if e.receiver != t.to_address {
        return false;
    }
    let dt = t.timestamp.0 as i128 - e.timestamp.0 as i128;
    if causal && dt < 0 {
        return false;
    }
    let gap = dt.abs();
    let within = if strict { gap < tol as i128 } else { gap <= tol as i128 };
    if !within || !oracle_equivalent(&e.token.symbol, &t.token.symbol, spec) {
        return false;
    }
    if is_valued(e.token.class) {
        is_valued(t.token.class) && e.amount.is_some() && e.amount == t.amount
    } else {
        t.token.class == AssetClass::NonFungible
            && e.token_ids.len() == 1
            && t.token_id.as_ref() == Some(&e.token_ids[0])
    }
}

/// (kind, sorted surviving tx ids) per event, by scanning every pair.
fn oracle_match(
    events: &[BridgeEvent],
    transfers: &[ChainTransfer],
    tol: u64,
    causal: bool,
    strict: bool,
    spec: &BridgeSpec,
) -> Vec<(OutcomeKind, Vec<TxId>)> {
    events
        .iter()
        .map(|e| {
            let mut hits: Vec<TxId> = transfers
                .iter()
                .filter(|t| oracle_pair(e, t, tol, causal, strict, spec))
                .map(|t| t.tx_id)
                .collect();
            hits.sort();
            let kind = match hits.len() {
                0 => OutcomeKind::Unmatched,
                1 => OutcomeKind::Exact,
                _ => OutcomeKind::Ambiguous,
            };
            (kind, hits)
        })
        .collect()
}

fn survivors(r: &MatchRecord) -> Vec<TxId> {
    let mut v: Vec<TxId> = r.counterpart.into_iter().chain(r.candidates.iter().copied()).collect();
    v.sort();
    v
}

// ---------- strategies ----------

const SYMBOLS: [(&str, AssetClass); 7] = [
    ("ETH", AssetClass::Native),
    ("WETH", AssetClass::Fungible),
    ("USDC", AssetClass::Fungible),
    ("usdc.e", AssetClass::Fungible),
    ("DAI", AssetClass::Fungible),
    ("KONGZ", AssetClass::NonFungible),
    ("LAND", AssetClass::NonFungible),
];

fn token_strategy() -> impl Strategy<Value = TokenKey> {
    (0..SYMBOLS.len()).prop_map(|i| TokenKey::new(SYMBOLS[i].0, SYMBOLS[i].1))
}

fn small_event(i: usize) -> impl Strategy<Value = BridgeEvent> {
    (0u8..3, token_strategy(), 1u64..4, 0u64..3000, prop::collection::vec(1u64..4, 1..3)).prop_map(
        move |(r, token, v, ts, ids)| {
            let nft = token.class == AssetClass::NonFungible;
            BridgeEvent {
                event_id: format!("e{i}"),
                tx_id: TxId([i as u8; 32]),
                log_index: 0,
                receiver: AccountAddress([r; 20]),
                amount: (!nft).then(|| Amount::from(v)),
                token_ids: if nft { ids.into_iter().map(TokenId::from).collect() } else { vec![] },
                token,
                timestamp: Timestamp(ts),
                block_number: ts / 12,
                direction: Direction::Deposit,
                chain: ChainLabel::new("ethereum"),
            }
        },
    )
}

fn small_transfer(i: usize) -> impl Strategy<Value = ChainTransfer> {
    (0u8..3, token_strategy(), 1u64..4, 0u64..3000).prop_map(move |(r, token, v, ts)| {
        let nft = token.class == AssetClass::NonFungible;
        let mut tx = [0u8; 32];
        tx[..8].copy_from_slice(&(i as u64).to_be_bytes());
        tx[31] = 0xee;
        ChainTransfer {
            tx_id: TxId(tx),
            to_address: AccountAddress([r; 20]),
            from_address: AccountAddress::ZERO,
            amount: (!nft).then(|| Amount::from(v)),
            token_id: nft.then(|| TokenId::from(v)),
            token,
            timestamp: Timestamp(ts),
            block_number: ts / 2,
            chain: ChainLabel::new("polygon"),
            truncated: false,
        }
    })
}

fn events_strategy() -> impl Strategy<Value = Vec<BridgeEvent>> {
    (0usize..30).prop_flat_map(|n| (0..n).map(small_event).collect::<Vec<_>>())
}

fn transfers_strategy() -> impl Strategy<Value = Vec<ChainTransfer>> {
    (0usize..60).prop_flat_map(|n| (0..n).map(small_transfer).collect::<Vec<_>>())
}

fn mixed_case(hex: &str, mask: u64) -> String {
    hex.chars()
        .enumerate()
        .map(|(i, c)| if mask >> (i % 64) & 1 == 1 { c.to_ascii_uppercase() } else { c })
        .collect()
}

fn u256_strategy() -> impl Strategy<Value = U256> {
    any::<[u8; 32]>().prop_map(U256::from_be_bytes)
}

// ---------- properties ----------

proptest! {
    #[test]
    fn address_parsing_is_case_insensitive_and_idempotent(bytes in any::<[u8; 20]>(), mask in any::<u64>()) {
        let a = AccountAddress(bytes);
        let text = a.to_string();
        prop_assert_eq!(text.clone(), text.to_lowercase());
        let shouted = format!("0x{}", mixed_case(&text[2..], mask));
        let parsed = canonicalize_address(&shouted).unwrap();
        prop_assert_eq!(parsed, a);
        prop_assert_eq!(canonicalize_address(&parsed.to_string()).unwrap(), parsed);
    }

    #[test]
    fn token_equivalence_is_reflexive_and_symmetric(a in token_strategy(), b in token_strategy()) {
        let spec = default_polygon_pos_spec();
        prop_assert!(token_equivalent(&a, &a, &spec));
        prop_assert_eq!(token_equivalent(&a, &b, &spec), token_equivalent(&b, &a, &spec));
        prop_assert_eq!(
            token_equivalent(&a, &b, &spec),
            oracle_equivalent(&a.symbol, &b.symbol, &spec)
        );
    }

    #[test]
    fn keccak_agrees_with_reference(input in prop::collection::vec(any::<u8>(), 0..300)) {
        let expected: [u8; 32] = Keccak256::digest(&input).into();
        prop_assert_eq!(keccak256(&input), expected);
    }

    #[test]
    fn indexed_matching_equals_all_pairs_scan(
        events in events_strategy(),
        transfers in transfers_strategy(),
        tol in 1u64..1500,
        causal in any::<bool>(),
        strict in any::<bool>(),
    ) {
        let spec = default_polygon_pos_spec();
        let mut cfg = MatchConfig::new(tol, Direction::Deposit).unwrap();
        cfg.causal_only = causal;
        cfg.strict_gap = strict;
        let report = match_all(&events, &transfers, &cfg, &spec);
        let expected = oracle_match(&events, &transfers, tol, causal, strict, &spec);
        prop_assert_eq!(report.results.len(), events.len());
        for (r, (kind, hits)) in report.records().iter().zip(&expected) {
            prop_assert_eq!(r.outcome, *kind);
            prop_assert_eq!(&survivors(r), hits);
        }
        let c = report.counts;
        prop_assert_eq!(c.total() as usize, events.len());
    }

    #[test]
    fn widening_tolerance_never_loses_candidates(
        events in events_strategy(),
        transfers in transfers_strategy(),
        lo in 1u64..1000,
        extra in 0u64..1000,
    ) {
        let spec = default_polygon_pos_spec();
        let narrow = MatchConfig::new(lo, Direction::Deposit).unwrap();
        let wide = narrow.with_tolerance(lo + extra).unwrap();
        let a = match_all(&events, &transfers, &narrow, &spec).records();
        let b = match_all(&events, &transfers, &wide, &spec).records();
        for (x, y) in a.iter().zip(&b) {
            let sx: BTreeSet<_> = survivors(x).into_iter().collect();
            let sy: BTreeSet<_> = survivors(y).into_iter().collect();
            prop_assert!(sx.is_subset(&sy));
        }
    }

    #[test]
    fn exclusive_assignment_is_one_to_one(
        events in events_strategy(),
        transfers in transfers_strategy(),
        tol in 1u64..1500,
    ) {
        let spec = default_polygon_pos_spec();
        let cfg = MatchConfig::new(tol, Direction::Deposit).unwrap().exclusive();
        let records = match_all(&events, &transfers, &cfg, &spec).records();
        let mut used = BTreeSet::new();
        for r in &records {
            if let Some(tx) = r.counterpart {
                prop_assert!(used.insert(tx), "transfer {} assigned twice", tx);
            }
            prop_assert_eq!(r.outcome == OutcomeKind::Exact, r.counterpart.is_some());
        }
        // every exclusive exact pair is admissible under the plain criteria
        let mut plain_cfg = cfg;
        plain_cfg.exclusive_assignment = false;
        let plain = match_all(&events, &transfers, &plain_cfg, &spec).records();
        for (x, p) in records.iter().zip(&plain) {
            if let Some(tx) = x.counterpart {
                prop_assert!(survivors(p).contains(&tx));
            }
        }
    }

    #[test]
    fn explode_preserves_token_ids(ids in prop::collection::vec(any::<u64>(), 1..20)) {
        let event = BridgeEvent {
            event_id: "0xab:3".into(),
            tx_id: TxId([0xab; 32]),
            log_index: 3,
            receiver: AccountAddress([1; 20]),
            token: TokenKey::new("KONGZ", AssetClass::NonFungible),
            amount: None,
            token_ids: ids.iter().copied().map(TokenId::from).collect(),
            timestamp: Timestamp(1),
            block_number: 1,
            direction: Direction::Deposit,
            chain: ChainLabel::new("ethereum"),
        };
        let parts = explode_batch(event.clone());
        prop_assert_eq!(parts.len(), ids.len());
        let got: Vec<TokenId> = parts.iter().flat_map(|p| p.token_ids.clone()).collect();
        prop_assert_eq!(got, event.token_ids.clone());
        let distinct: BTreeSet<_> = parts.iter().map(|p| p.event_id.clone()).collect();
        prop_assert_eq!(distinct.len(), parts.len());
        for p in &parts {
            prop_assert_eq!(p.tx_id, event.tx_id);
            prop_assert_eq!(p.receiver, event.receiver);
            prop_assert_eq!(p.timestamp, event.timestamp);
        }
    }

    #[test]
    fn decoding_never_panics(
        which in 0usize..8,
        extra_topics in prop::collection::vec(any::<[u8; 32]>(), 0..5),
        data in prop::collection::vec(any::<u8>(), 0..200),
        emitter_pick in 0usize..6,
        random_emitter in any::<[u8; 20]>(),
    ) {
        let spec = default_polygon_pos_spec();
        let mut topics: Vec<Word> = Vec::new();
        if let Some(d) = spec.events().get(which) {
            topics.push(d.topic0);
        }
        topics.extend(extra_topics.into_iter().map(Word));
        let address = spec
            .contracts()
            .values()
            .nth(emitter_pick)
            .copied()
            .unwrap_or(AccountAddress(random_emitter));
        let log = RawLog {
            address,
            topics,
            data: HexBytes(data),
            tx_id: TxId([1; 32]),
            log_index: 0,
            block_number: 1,
            block_timestamp: Timestamp(1),
        };
        let _ = decode_log(&log, &spec);
        let claim = RawTransaction {
            tx_id: log.tx_id,
            from: AccountAddress([2; 20]),
            to: address,
            input: HexBytes(vec![0x38, 0x05, 0x55, 0x0f]),
            value: Amount::default(),
            block_number: 1,
            block_timestamp: Timestamp(1),
        };
        let _ = decode_log_in_tx(&log, Some(&claim), &spec);
    }

    #[test]
    fn every_descriptor_round_trips(
        which in 0usize..7,
        receiver in any::<[u8; 20]>(),
        counterparty in any::<[u8; 20]>(),
        contract in any::<[u8; 20]>(),
        known_token in any::<bool>(),
        amount in u256_strategy(),
        ids in prop::collection::vec(u256_strategy(), 1..6),
        tx in any::<[u8; 32]>(),
        log_index in 0u64..10_000,
        block in 0u64..30_000_000,
        ts in 0u64..4_000_000_000,
    ) {
        let spec = default_polygon_pos_spec();
        let desc = &spec.events()[which];
        let list = desc.field(FieldRole::TokenIdList).is_some();
        let token_contract = if desc.field(FieldRole::TokenContract).is_some() {
            Some(if known_token {
                *spec.tokens().keys().next().unwrap()
            } else {
                AccountAddress(contract)
            })
        } else {
            None
        };
        let fields = EventFields {
            receiver: AccountAddress(receiver),
            token_contract,
            amount: desc.field(FieldRole::Amount).map(|_| Amount::new(amount)),
            token_ids: if list {
                ids.iter().copied().map(TokenId::new).collect()
            } else if desc.field(FieldRole::TokenId).is_some() {
                vec![TokenId::new(ids[0])]
            } else {
                vec![]
            },
            counterparty: AccountAddress(counterparty),
        };
        let meta = LogMeta {
            tx_id: TxId(tx),
            log_index,
            block_number: block,
            block_timestamp: Timestamp(ts),
        };
        let log = encode_log(desc, &spec, &fields, meta);
        let claim = RawTransaction {
            tx_id: TxId(tx),
            from: AccountAddress(receiver),
            to: AccountAddress([9; 20]),
            input: HexBytes(vec![0x38, 0x05, 0x55, 0x0f, 0, 0]),
            value: Amount::default(),
            block_number: block,
            block_timestamp: Timestamp(ts),
        };
        let event = decode_log_in_tx(&log, Some(&claim), &spec).unwrap().expect("own log decodes");
        prop_assert_eq!(event.receiver, fields.receiver);
        prop_assert_eq!(event.amount, fields.amount);
        prop_assert_eq!(&event.token_ids, &fields.token_ids);
        prop_assert_eq!(event.token.contract_address, token_contract);
        prop_assert_eq!(event.token.class, desc.asset_class);
        prop_assert_eq!(event.direction, desc.direction);
        prop_assert_eq!(event.tx_id, TxId(tx));
        prop_assert_eq!(event.log_index, log_index);
        prop_assert_eq!(event.block_number, block);
        prop_assert_eq!(event.timestamp, Timestamp(ts));
        let expected_symbol = match token_contract {
            Some(c) => spec.tokens().get(&c).cloned().unwrap_or_else(|| c.to_string()),
            None => desc.symbol.clone().unwrap(),
        };
        prop_assert_eq!(event.token.symbol, expected_symbol);
        if desc.field(FieldRole::TokenContract).map(|f| f.slot) == Some(Slot::Emitter) {
            prop_assert_eq!(Some(log.address), token_contract);
        }
    }
}

#[test]
fn descriptor_topics_agree_with_reference_keccak() {
    let spec = default_polygon_pos_spec();
    for d in spec.events() {
        let expected: [u8; 32] = Keccak256::digest(d.signature.as_bytes()).into();
        assert_eq!(d.topic0.0, expected, "{}", d.name);
        assert_eq!(event_topic(&d.signature).0, expected);
    }
    // Transfer(address,address,uint256) is the well-known ERC-20 topic.
    let transfer: Word = "0xddf252ad1be2c89b69c2b068fc378daa952ba7f163c4a11628f55a4df523b3ef"
        .parse()
        .unwrap();
    assert_eq!(event_topic("Transfer(address,address,uint256)"), transfer);
}

#[test]
fn oracle_sanity() {
    let spec = default_polygon_pos_spec();
    assert!(oracle_equivalent("ETH", "weth", &spec));
    assert!(!oracle_equivalent("ETH", "USDC", &spec));
    assert!(oracle_equivalent("USDC", " usdc.e", &spec));
}
