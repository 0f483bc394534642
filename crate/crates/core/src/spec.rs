// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Declarative bridge deployment descriptions.
//!
//! A [`BridgeSpec`] names the bridge contracts, the slot layout of every
//! event they emit, the token symbols that count as the same asset on both
//! chains, and the selector that marks withdrawal claims. Event signatures
//! are configuration; topic0 is always recomputed from them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ParseError, SpecError};
use crate::hash::event_topic;
use crate::model::{
    normalize_symbol, AccountAddress, AssetClass, ChainLabel, Direction, MethodId, TokenKey, Word,
};

/// Contract role that receives burns and emits mints on the destination chain.
pub const NULL_CONTRACT_ROLE: &str = "null-contract";

/// Where a field lives in an encoded log.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum Slot {
    /// Indexed parameter stored in `topics[k]`, `k >= 1`.
    Topic(u8),
    /// Head word `k` of the data section.
    Data(u16),
    /// The address of the contract that emitted the log.
    Emitter,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Topic(k) => write!(f, "topic:{k}"),
            Slot::Data(k) => write!(f, "data:{k}"),
            Slot::Emitter => f.write_str("emitter"),
        }
    }
}

impl FromStr for Slot {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseError::Malformed {
            what: "slot",
            input: s.to_string(),
        };
        if s == "emitter" {
            return Ok(Slot::Emitter);
        }
        let (kind, index) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "topic" => index.parse().map(Slot::Topic).map_err(|_| bad()),
            "data" => index.parse().map(Slot::Data).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Receiver,
    Amount,
    TokenId,
    TokenIdList,
    TokenContract,
    /// Present in the event but not used for matching (e.g. the depositor).
    Other,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FieldLayout {
    pub name: String,
    pub slot: Slot,
    pub role: FieldRole,
}

impl FieldLayout {
    pub fn new(name: &str, slot: Slot, role: FieldRole) -> Self {
        Self {
            name: name.to_string(),
            slot,
            role,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EventDescriptor {
    pub name: String,
    /// Canonical ABI signature, e.g. `LockedEther(address,address,uint256)`.
    pub signature: String,
    pub topic0: Word,
    /// Contract role whose address must emit this event. `None` accepts any
    /// emitter, which is only allowed together with `requires_method_id`.
    pub contract_role: Option<String>,
    pub fields: Vec<FieldLayout>,
    pub asset_class: AssetClass,
    pub direction: Direction,
    /// Fixed token symbol, used when the layout has no token-contract field.
    pub symbol: Option<String>,
    /// Only decoded when the enclosing transaction carries the withdrawal
    /// method id.
    pub requires_method_id: bool,
}

impl EventDescriptor {
    pub fn new(
        name: &str,
        signature: &str,
        contract_role: Option<&str>,
        fields: Vec<FieldLayout>,
        asset_class: AssetClass,
        direction: Direction,
    ) -> Self {
        Self {
            name: name.to_string(),
            signature: signature.to_string(),
            topic0: event_topic(signature),
            contract_role: contract_role.map(str::to_string),
            fields,
            asset_class,
            direction,
            symbol: None,
            requires_method_id: false,
        }
    }

    pub fn with_symbol(mut self, symbol: &str) -> Self {
        self.symbol = Some(symbol.to_string());
        self
    }

    pub fn corroborated(mut self) -> Self {
        self.requires_method_id = true;
        self
    }

    pub fn field(&self, role: FieldRole) -> Option<&FieldLayout> {
        self.fields.iter().find(|f| f.role == role)
    }

    /// Number of topics a matching log carries (topic0 plus indexed fields).
    pub fn topic_count(&self) -> usize {
        1 + self
            .fields
            .iter()
            .filter_map(|f| match f.slot {
                Slot::Topic(k) => Some(k as usize),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn validate(&self) -> Result<(), SpecError> {
        let bad = |reason: &str| SpecError::BadLayout {
            event: self.name.clone(),
            reason: reason.to_string(),
        };
        if !self.signature.starts_with(&format!("{}(", self.name)) || !self.signature.ends_with(')')
        {
            return Err(bad("signature does not name the event"));
        }
        if self.topic0 != event_topic(&self.signature) {
            return Err(bad("topic0 does not match the signature digest"));
        }
        let count = |role| self.fields.iter().filter(|f| f.role == role).count();
        if count(FieldRole::Receiver) != 1 {
            return Err(bad("exactly one field must have role receiver"));
        }
        match self.asset_class {
            AssetClass::Native | AssetClass::Fungible => {
                if count(FieldRole::Amount) != 1 {
                    return Err(bad("valued events need exactly one amount field"));
                }
                if count(FieldRole::TokenId) + count(FieldRole::TokenIdList) != 0 {
                    return Err(bad("valued events cannot carry token ids"));
                }
            }
            AssetClass::NonFungible => {
                if count(FieldRole::TokenId) + count(FieldRole::TokenIdList) != 1 {
                    return Err(bad("non-fungible events need one token id or token id list"));
                }
                if count(FieldRole::Amount) != 0 {
                    return Err(bad("non-fungible events cannot carry an amount"));
                }
            }
        }
        if count(FieldRole::TokenContract) > 1 {
            return Err(bad("at most one token contract field"));
        }
        if count(FieldRole::TokenContract) == 0 && self.symbol.is_none() {
            return Err(bad("needs a token contract field or a fixed symbol"));
        }
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            match f.slot {
                Slot::Topic(k) if !(1..=3).contains(&k) => {
                    return Err(bad("topic slots must be 1..=3"));
                }
                Slot::Emitter if !matches!(f.role, FieldRole::TokenContract | FieldRole::Other) => {
                    return Err(bad("emitter slot only supplies a token contract"));
                }
                Slot::Topic(_) | Slot::Emitter if f.role == FieldRole::TokenIdList => {
                    return Err(bad("token id lists live in the data section"));
                }
                _ => {}
            }
            if !seen.insert(f.slot) {
                return Err(bad("two fields share a slot"));
            }
        }
        if self.contract_role.is_none() && !self.requires_method_id {
            return Err(bad("events without an emitting contract need method-id corroboration"));
        }
        Ok(())
    }
}

/// Everything a [`BridgeSpec`] is built from, prior to validation.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BridgeSpecParts {
    pub version: String,
    pub source_chain: ChainLabel,
    pub destination_chain: ChainLabel,
    pub contracts: BTreeMap<String, AccountAddress>,
    pub events: Vec<EventDescriptor>,
    pub token_equivalences: Vec<(String, String)>,
    pub withdrawal_method_id: MethodId,
    /// Source-chain token contract → symbol.
    pub tokens: BTreeMap<AccountAddress, String>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BridgeSpec {
    parts: BridgeSpecParts,
    /// normalized symbol → representative of its equivalence class
    classes: BTreeMap<String, String>,
}

impl BridgeSpec {
    pub fn new(mut parts: BridgeSpecParts) -> Result<Self, SpecError> {
        for (role, addr) in &parts.contracts {
            if let Some((other, _)) = parts
                .contracts
                .iter()
                .find(|(r, a)| *r < role && *a == addr)
            {
                return Err(SpecError::DuplicateContract {
                    first: other.clone(),
                    second: role.clone(),
                    address: addr.to_string(),
                });
            }
        }
        if !parts.contracts.contains_key(NULL_CONTRACT_ROLE) {
            return Err(SpecError::MissingRequiredRole(NULL_CONTRACT_ROLE.to_string()));
        }
        let mut topics: BTreeMap<Word, &str> = BTreeMap::new();
        for ev in &parts.events {
            ev.validate()?;
            if let Some(role) = &ev.contract_role {
                if !parts.contracts.contains_key(role) {
                    return Err(SpecError::MissingRole {
                        event: ev.name.clone(),
                        role: role.clone(),
                    });
                }
            }
            if let Some(first) = topics.insert(ev.topic0, &ev.name) {
                return Err(SpecError::DuplicateTopic {
                    topic0: ev.topic0.to_string(),
                    first: first.to_string(),
                    second: ev.name.clone(),
                });
            }
        }

        let mut pairs = BTreeSet::new();
        for (a, b) in &parts.token_equivalences {
            let (a, b) = (normalize_symbol(a), normalize_symbol(b));
            if a.is_empty() || b.is_empty() {
                return Err(SpecError::BadEquivalence(format!("{a}/{b}")));
            }
            pairs.insert(if a <= b { (a, b) } else { (b, a) });
        }
        parts.token_equivalences = pairs.into_iter().collect();
        let classes = equivalence_classes(&parts.token_equivalences);
        Ok(Self { parts, classes })
    }

    pub fn parts(&self) -> &BridgeSpecParts {
        &self.parts
    }

    pub fn version(&self) -> &str {
        &self.parts.version
    }

    pub fn source_chain(&self) -> &ChainLabel {
        &self.parts.source_chain
    }

    pub fn destination_chain(&self) -> &ChainLabel {
        &self.parts.destination_chain
    }

    pub fn contracts(&self) -> &BTreeMap<String, AccountAddress> {
        &self.parts.contracts
    }

    pub fn contract(&self, role: &str) -> Option<AccountAddress> {
        self.parts.contracts.get(role).copied()
    }

    pub fn null_contract(&self) -> AccountAddress {
        self.parts.contracts[NULL_CONTRACT_ROLE]
    }

    pub fn events(&self) -> &[EventDescriptor] {
        &self.parts.events
    }

    pub fn event(&self, name: &str) -> Option<&EventDescriptor> {
        self.parts.events.iter().find(|e| e.name == name)
    }

    pub fn descriptor_for_topic(&self, topic0: &Word) -> Option<&EventDescriptor> {
        self.parts.events.iter().find(|e| &e.topic0 == topic0)
    }

    /// Normalized, ordered, deduplicated symbol pairs.
    pub fn token_equivalences(&self) -> &[(String, String)] {
        &self.parts.token_equivalences
    }

    pub fn withdrawal_method_id(&self) -> MethodId {
        self.parts.withdrawal_method_id
    }

    pub fn tokens(&self) -> &BTreeMap<AccountAddress, String> {
        &self.parts.tokens
    }

    /// Symbol for a source-chain token contract; unknown contracts are named
    /// by their address so they never collide with a real symbol.
    pub fn symbol_for_contract(&self, contract: &AccountAddress) -> String {
        self.parts
            .tokens
            .get(contract)
            .cloned()
            .unwrap_or_else(|| contract.to_string())
    }

    /// Table row a token belongs to: wrapped forms of the native asset count
    /// as native.
    pub fn asset_type(&self, token: &TokenKey) -> AssetClass {
        if token.class == AssetClass::Native {
            return AssetClass::Native;
        }
        let class = self.token_class(&token.symbol);
        let wraps_native = self.parts.events.iter().any(|e| {
            e.asset_class == AssetClass::Native
                && e.symbol.as_deref().map(|s| self.token_class(s)) == Some(class.clone())
        });
        if wraps_native {
            AssetClass::Native
        } else {
            token.class
        }
    }

    /// Representative symbol of the equivalence class containing `symbol`.
    pub fn token_class(&self, symbol: &str) -> String {
        let normalized = normalize_symbol(symbol);
        match self.classes.get(&normalized) {
            Some(rep) => rep.clone(),
            None => normalized,
        }
    }
}

fn equivalence_classes(pairs: &[(String, String)]) -> BTreeMap<String, String> {
    // Union-find over the symbols named in the pairs; the representative is
    // the lexicographically smallest member.
    let mut parent: BTreeMap<String, String> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<String, String>, s: &str) -> String {
        let mut cur = s.to_string();
        loop {
            let next = parent.get(&cur).cloned().unwrap_or_else(|| cur.clone());
            if next == cur {
                return cur;
            }
            cur = next;
        }
    }
    for (a, b) in pairs {
        parent.entry(a.clone()).or_insert_with(|| a.clone());
        parent.entry(b.clone()).or_insert_with(|| b.clone());
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent.insert(hi, lo);
        }
    }
    let symbols: Vec<String> = parent.keys().cloned().collect();
    symbols
        .into_iter()
        .map(|s| {
            let rep = find(&mut parent, &s);
            (s, rep)
        })
        .collect()
}

/// True iff the two tokens are the same asset under the spec's
/// equivalence map. Reflexive and symmetric; asset class is not compared.
pub fn token_equivalent(a: &TokenKey, b: &TokenKey, spec: &BridgeSpec) -> bool {
    spec.token_class(&a.symbol) == spec.token_class(&b.symbol)
}

fn addr(text: &str) -> AccountAddress {
    text.parse().expect("static address literal")
}

/// The Polygon PoS bridge between Ethereum and Polygon.
///
/// Only the plasma bridge address is independently documented; the other
/// contract addresses and all event signatures must be confirmed against
/// the deployed contracts before use on live data.
pub fn default_polygon_pos_spec() -> BridgeSpec {
    use FieldRole::*;
    use Slot::*;

    let contracts = [
        ("ether-bridge", "0x8484ef722627bf18ca5ae6bcf031c23e6e922b30"),
        ("erc20-bridge", "0x40ec5b33f54e0e8a33a975908c5ba1c14e5bbbdf"),
        ("erc721-predicate", "0xe6f45376f64e1f568bd1404c155e5ffd2f80f7ad"),
        ("plasma-bridge", "0xA0c68C638235ee32657e8f720a23ceC1bFc77C77"),
        (NULL_CONTRACT_ROLE, "0x0000000000000000000000000000000000000000"),
    ]
    .into_iter()
    .map(|(role, a)| (role.to_string(), addr(a)))
    .collect();

    let tokens = [
        ("0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48", "USDC"),
        ("0xdac17f958d2ee523a2206206994597c13d831ec7", "USDT"),
        ("0x6b175474e89094c44da98b954eedeac495271d0f", "DAI"),
        ("0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2", "WETH"),
    ]
    .into_iter()
    .map(|(a, s)| (addr(a), s.to_string()))
    .collect();

    let events = alloc::vec![
        EventDescriptor::new(
            "LockedEther",
            "LockedEther(address,address,uint256)",
            Some("ether-bridge"),
            alloc::vec![
                FieldLayout::new("depositor", Topic(1), Other),
                FieldLayout::new("depositReceiver", Topic(2), Receiver),
                FieldLayout::new("amount", Data(0), Amount),
            ],
            AssetClass::Native,
            Direction::Deposit,
        )
        .with_symbol("ETH"),
        EventDescriptor::new(
            "LockedERC20",
            "LockedERC20(address,address,address,uint256)",
            Some("erc20-bridge"),
            alloc::vec![
                FieldLayout::new("depositor", Topic(1), Other),
                FieldLayout::new("depositReceiver", Topic(2), Receiver),
                FieldLayout::new("rootToken", Topic(3), TokenContract),
                FieldLayout::new("amount", Data(0), Amount),
            ],
            AssetClass::Fungible,
            Direction::Deposit,
        ),
        EventDescriptor::new(
            "LockedERC721",
            "LockedERC721(address,address,address,uint256)",
            Some("erc721-predicate"),
            alloc::vec![
                FieldLayout::new("depositor", Topic(1), Other),
                FieldLayout::new("depositReceiver", Topic(2), Receiver),
                FieldLayout::new("rootToken", Topic(3), TokenContract),
                FieldLayout::new("tokenId", Data(0), TokenId),
            ],
            AssetClass::NonFungible,
            Direction::Deposit,
        ),
        EventDescriptor::new(
            "LockedERC721Batch",
            "LockedERC721Batch(address,address,address,uint256[])",
            Some("erc721-predicate"),
            alloc::vec![
                FieldLayout::new("depositor", Topic(1), Other),
                FieldLayout::new("depositReceiver", Topic(2), Receiver),
                FieldLayout::new("rootToken", Topic(3), TokenContract),
                FieldLayout::new("tokenIds", Data(0), TokenIdList),
            ],
            AssetClass::NonFungible,
            Direction::Deposit,
        ),
        EventDescriptor::new(
            "ExitedEther",
            "ExitedEther(address,uint256)",
            Some("ether-bridge"),
            alloc::vec![
                FieldLayout::new("exitor", Topic(1), Receiver),
                FieldLayout::new("amount", Data(0), Amount),
            ],
            AssetClass::Native,
            Direction::Withdrawal,
        )
        .with_symbol("ETH"),
        EventDescriptor::new(
            "ExitedERC721",
            "ExitedERC721(address,address,uint256)",
            Some("erc721-predicate"),
            alloc::vec![
                FieldLayout::new("exitor", Topic(1), Receiver),
                FieldLayout::new("rootToken", Topic(2), TokenContract),
                FieldLayout::new("tokenId", Data(0), TokenId),
            ],
            AssetClass::NonFungible,
            Direction::Withdrawal,
        ),
        EventDescriptor::new(
            "Transfer",
            "Transfer(address,address,uint256)",
            None,
            alloc::vec![
                FieldLayout::new("from", Topic(1), Other),
                FieldLayout::new("to", Topic(2), Receiver),
                FieldLayout::new("value", Data(0), Amount),
                FieldLayout::new("token", Emitter, TokenContract),
            ],
            AssetClass::Fungible,
            Direction::Withdrawal,
        )
        .corroborated(),
    ];

    BridgeSpec::new(BridgeSpecParts {
        version: "polygon-pos/1".to_string(),
        source_chain: ChainLabel::new("ethereum"),
        destination_chain: ChainLabel::new("polygon"),
        contracts,
        events,
        token_equivalences: alloc::vec![
            ("ETH".to_string(), "WETH".to_string()),
            ("USDC".to_string(), "USDC.e".to_string()),
        ],
        withdrawal_method_id: MethodId([0x38, 0x05, 0x55, 0x0f]),
        tokens,
    })
    .expect("default spec is valid")
}
