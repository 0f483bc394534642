// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Domain types shared by every stage of the pipeline.
//!
//! Every value here is immutable once built. Text forms (lowercase `0x` hex
//! for addresses and hashes, decimal for 256-bit integers) are the
//! interchange representation used by all file formats.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use ruint::aliases::U256;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseError;

fn parse_fixed_hex<const N: usize>(text: &str, what: &'static str) -> Result<[u8; N], ParseError> {
    let malformed = || ParseError::Malformed {
        what,
        input: text.to_string(),
    };
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .ok_or_else(malformed)?;
    if digits.len() != N * 2 {
        return Err(malformed());
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(digits, &mut out).map_err(|_| malformed())?;
    Ok(out)
}

macro_rules! hex_newtype_serde {
    ($ty:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A 20-byte EVM account address. The same address identifies the same
/// owner on every EVM chain, which is what lets a lock on one chain be tied
/// to a mint on the other.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AccountAddress(pub [u8; 20]);

impl AccountAddress {
    pub const ZERO: Self = Self([0u8; 20]);

    pub const fn new(bytes: [u8; 20]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Left-pads the address into a 32-byte ABI word.
    pub fn to_word(&self) -> [u8; 32] {
        let mut word = [0u8; 32];
        word[12..].copy_from_slice(&self.0);
        word
    }
}

/// Parses mixed-case `0x`-prefixed hex into the canonical address.
pub fn canonicalize_address(text: &str) -> Result<AccountAddress, ParseError> {
    text.parse()
}

impl FromStr for AccountAddress {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed_hex::<20>(s, "account address").map(Self)
    }
}

impl fmt::Display for AccountAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("0x")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for AccountAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

hex_newtype_serde!(AccountAddress);

/// 32-byte transaction hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TxId(pub [u8; 32]);

impl FromStr for TxId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed_hex::<32>(s, "transaction hash").map(Self)
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("0x")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

hex_newtype_serde!(TxId);

/// A 32-byte hash value such as a log topic.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub [u8; 32]);

impl FromStr for Word {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed_hex::<32>(s, "32-byte word").map(Self)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("0x")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

hex_newtype_serde!(Word);

/// Four-byte function selector taken from the head of transaction input.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MethodId(pub [u8; 4]);

impl FromStr for MethodId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed_hex::<4>(s, "method id").map(Self)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

hex_newtype_serde!(MethodId);

macro_rules! uint_newtype {
    ($(#[$meta:meta])* $ty:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $ty(pub U256);

        impl $ty {
            pub const fn new(value: U256) -> Self {
                Self(value)
            }

            pub fn from_u128(value: u128) -> Self {
                Self(U256::from(value))
            }

            pub fn from_word(word: &[u8; 32]) -> Self {
                Self(U256::from_be_bytes(*word))
            }

            pub fn to_word(&self) -> [u8; 32] {
                self.0.to_be_bytes()
            }
        }

        impl From<u64> for $ty {
            fn from(v: u64) -> Self {
                Self(U256::from(v))
            }
        }

        impl FromStr for $ty {
            type Err = ParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(ParseError::Malformed {
                        what: stringify!($ty),
                        input: s.to_string(),
                    });
                }
                U256::from_str_radix(s, 10)
                    .map(Self)
                    .map_err(|_| ParseError::Malformed {
                        what: stringify!($ty),
                        input: s.to_string(),
                    })
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }

        // Decimal strings: 256-bit values do not survive JSON numbers.
        hex_newtype_serde!($ty);
    };
}

uint_newtype!(
    /// Token quantity in base units. Compared by exact integer equality only.
    Amount
);
uint_newtype!(
    /// ERC-721 token identifier.
    TokenId
);

/// Unix seconds, UTC.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn secs(self) -> u64 {
        self.0
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn signed_since(self, earlier: Timestamp) -> i64 {
        (self.0 as i128 - earlier.0 as i128).clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Native,
    Fungible,
    NonFungible,
}

impl AssetClass {
    pub const ALL: [AssetClass; 3] = [Self::Native, Self::Fungible, Self::NonFungible];

    /// Native value and its wrapped fungible form are compared the same way
    /// (by amount), so they share a candidate bucket.
    pub fn match_family(self) -> AssetClass {
        match self {
            Self::Native | Self::Fungible => Self::Fungible,
            Self::NonFungible => Self::NonFungible,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Native => "native",
            Self::Fungible => "fungible",
            Self::NonFungible => "non_fungible",
        }
    }

    /// Label used in match-rate tables.
    pub fn token_type_label(self) -> &'static str {
        match self {
            Self::Native => "Ether",
            Self::Fungible => "ERC20",
            Self::NonFungible => "ERC721",
        }
    }
}

impl fmt::Display for AssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssetClass {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" | "ether" => Ok(Self::Native),
            "fungible" | "erc20" => Ok(Self::Fungible),
            "non_fungible" | "nonfungible" | "erc721" => Ok(Self::NonFungible),
            _ => Err(ParseError::Malformed {
                what: "asset class",
                input: s.to_string(),
            }),
        }
    }
}

/// Deposit: lock on the source chain, mint on the destination.
/// Withdrawal: burn on the destination chain, exit on the source.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Deposit,
    Withdrawal,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Deposit => "deposit",
            Self::Withdrawal => "withdrawal",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "deposit" => Ok(Self::Deposit),
            "withdrawal" => Ok(Self::Withdrawal),
            _ => Err(ParseError::Malformed {
                what: "direction",
                input: s.to_string(),
            }),
        }
    }
}

/// Free-form chain name such as `ethereum` or `polygon`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainLabel(pub String);

impl ChainLabel {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Upper-cased, whitespace-trimmed token symbol.
pub fn normalize_symbol(symbol: &str) -> String {
    symbol.trim().to_uppercase()
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct TokenKey {
    pub symbol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract_address: Option<AccountAddress>,
    pub class: AssetClass,
}

impl TokenKey {
    pub fn new(symbol: impl Into<String>, class: AssetClass) -> Self {
        Self {
            symbol: symbol.into(),
            contract_address: None,
            class,
        }
    }

    pub fn with_contract(mut self, contract: AccountAddress) -> Self {
        self.contract_address = Some(contract);
        self
    }

    pub fn normalized_symbol(&self) -> String {
        normalize_symbol(&self.symbol)
    }
}

/// A decoded bridge action on the chain where the cross-chain transaction
/// starts: a lock for deposits, a burn for withdrawals. Exits decoded from
/// the source chain use the same shape before they are turned into
/// candidate transfers.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BridgeEvent {
    pub event_id: String,
    pub tx_id: TxId,
    pub log_index: u64,
    pub receiver: AccountAddress,
    pub token: TokenKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<Amount>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_ids: Vec<TokenId>,
    pub timestamp: Timestamp,
    pub block_number: u64,
    pub direction: Direction,
    pub chain: ChainLabel,
}

impl BridgeEvent {
    /// Class-consistency rules: valued classes carry an amount and no token
    /// ids, non-fungible events carry token ids and no amount.
    pub fn check_consistency(&self) -> Result<(), ParseError> {
        check_class_fields(
            &self.event_id,
            self.token.class,
            self.amount.is_some(),
            !self.token_ids.is_empty(),
        )
    }
}

/// A transfer record on the counterpart chain; one entry of an address's
/// transfer history.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainTransfer {
    pub tx_id: TxId,
    pub to_address: AccountAddress,
    pub from_address: AccountAddress,
    pub token: TokenKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<Amount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_id: Option<TokenId>,
    pub timestamp: Timestamp,
    pub block_number: u64,
    pub chain: ChainLabel,
    #[serde(default)]
    pub truncated: bool,
}

impl ChainTransfer {
    pub fn check_consistency(&self) -> Result<(), ParseError> {
        check_class_fields(
            &self.tx_id.to_string(),
            self.token.class,
            self.amount.is_some(),
            self.token_id.is_some(),
        )
    }
}

fn check_class_fields(
    id: &str,
    class: AssetClass,
    has_amount: bool,
    has_token_id: bool,
) -> Result<(), ParseError> {
    let ok = match class {
        AssetClass::Native | AssetClass::Fungible => has_amount && !has_token_id,
        AssetClass::NonFungible => has_token_id && !has_amount,
    };
    if ok {
        Ok(())
    } else {
        Err(ParseError::ClassMismatch {
            id: id.to_string(),
            class,
        })
    }
}
