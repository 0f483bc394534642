// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Raw log and transaction decoding against a [`BridgeSpec`].

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use ruint::aliases::U256;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DecodeError, ParseError};
use crate::model::{
    AccountAddress, Amount, BridgeEvent, TokenId, TokenKey, Timestamp, TxId, Word,
};
use crate::spec::{BridgeSpec, EventDescriptor, FieldRole, Slot};

/// Byte string rendered as `0x`-prefixed lowercase hex.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct HexBytes(pub Vec<u8>);

impl fmt::Debug for HexBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(&self.0))
    }
}

impl Serialize for HexBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("0x{}", hex::encode(&self.0)))
    }
}

impl<'de> Deserialize<'de> for HexBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = Cow::<'de, str>::deserialize(d)?;
        let digits = text.strip_prefix("0x").ok_or_else(|| {
            serde::de::Error::custom(ParseError::Malformed {
                what: "hex bytes",
                input: text.to_string(),
            })
        })?;
        hex::decode(digits).map(HexBytes).map_err(|_| {
            serde::de::Error::custom(ParseError::Malformed {
                what: "hex bytes",
                input: text.to_string(),
            })
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawLog {
    pub address: AccountAddress,
    pub topics: Vec<Word>,
    pub data: HexBytes,
    pub tx_id: TxId,
    pub log_index: u64,
    pub block_number: u64,
    pub block_timestamp: Timestamp,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawTransaction {
    pub tx_id: TxId,
    pub from: AccountAddress,
    pub to: AccountAddress,
    pub input: HexBytes,
    pub value: Amount,
    pub block_number: u64,
    pub block_timestamp: Timestamp,
}

/// True iff the transaction input starts with the spec's withdrawal selector.
pub fn is_withdrawal_claim(tx: &RawTransaction, spec: &BridgeSpec) -> bool {
    tx.input.0.len() >= 4 && tx.input.0[..4] == spec.withdrawal_method_id().0
}

/// Decodes a bridge log. Logs that are not bridge events yield `Ok(None)`;
/// only a recognised event whose payload breaks its layout is an error.
///
/// Descriptors that require method-id corroboration never decode here; use
/// [`decode_log_in_tx`] with the enclosing transaction.
pub fn decode_log(log: &RawLog, spec: &BridgeSpec) -> Result<Option<BridgeEvent>, DecodeError> {
    decode_log_in_tx(log, None, spec)
}

pub fn decode_log_in_tx(
    log: &RawLog,
    tx: Option<&RawTransaction>,
    spec: &BridgeSpec,
) -> Result<Option<BridgeEvent>, DecodeError> {
    let Some(topic0) = log.topics.first() else {
        return Ok(None);
    };
    let Some(desc) = spec.descriptor_for_topic(topic0) else {
        return Ok(None);
    };
    // Indexed-ness is part of an event's identity: ERC-721 Transfer shares
    // topic0 with ERC-20 Transfer but carries one more topic.
    if log.topics.len() != desc.topic_count() {
        return Ok(None);
    }
    if let Some(role) = &desc.contract_role {
        if spec.contract(role) != Some(log.address) {
            return Ok(None);
        }
    }
    if desc.requires_method_id {
        let corroborated = tx
            .map(|tx| tx.tx_id == log.tx_id && is_withdrawal_claim(tx, spec))
            .unwrap_or(false);
        if !corroborated {
            return Ok(None);
        }
    }
    decode_with(desc, log, spec).map(Some)
}

fn decode_with(
    desc: &EventDescriptor,
    log: &RawLog,
    spec: &BridgeSpec,
) -> Result<BridgeEvent, DecodeError> {
    let err = |reason: String| DecodeError {
        event: desc.name.clone(),
        tx_id: log.tx_id,
        log_index: log.log_index,
        reason,
    };
    let data = &log.data.0;
    let head_words = desc
        .fields
        .iter()
        .filter_map(|f| match f.slot {
            Slot::Data(k) => Some(k as usize + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    if data.len() < head_words * 32 {
        return Err(err(format!(
            "data has {} bytes, layout needs at least {}",
            data.len(),
            head_words * 32
        )));
    }

    let word_at = |slot: Slot| -> [u8; 32] {
        match slot {
            Slot::Topic(k) => log.topics[k as usize].0,
            Slot::Data(k) => {
                let start = k as usize * 32;
                let mut w = [0u8; 32];
                w.copy_from_slice(&data[start..start + 32]);
                w
            }
            Slot::Emitter => log.address.to_word(),
        }
    };
    let address_at = |slot: Slot, name: &str| -> Result<AccountAddress, DecodeError> {
        let w = word_at(slot);
        if w[..12].iter().any(|b| *b != 0) {
            return Err(err(format!("field {name} is not a left-padded address")));
        }
        let mut a = [0u8; 20];
        a.copy_from_slice(&w[12..]);
        Ok(AccountAddress(a))
    };

    let mut receiver = None;
    let mut amount = None;
    let mut token_ids = Vec::new();
    let mut token_contract = None;
    for field in &desc.fields {
        match field.role {
            FieldRole::Receiver => receiver = Some(address_at(field.slot, &field.name)?),
            FieldRole::TokenContract => {
                token_contract = Some(address_at(field.slot, &field.name)?)
            }
            FieldRole::Amount => amount = Some(Amount::from_word(&word_at(field.slot))),
            FieldRole::TokenId => token_ids.push(TokenId::from_word(&word_at(field.slot))),
            FieldRole::TokenIdList => {
                let Slot::Data(k) = field.slot else {
                    return Err(err("token id list outside data section".to_string()));
                };
                token_ids = decode_uint_array(data, k as usize).map_err(err)?;
                if token_ids.is_empty() {
                    return Err(err("empty token id list".to_string()));
                }
            }
            FieldRole::Other => {}
        }
    }

    let receiver = receiver.ok_or_else(|| err("no receiver field".to_string()))?;
    let symbol = match (&token_contract, &desc.symbol) {
        (Some(contract), _) => spec.symbol_for_contract(contract),
        (None, Some(symbol)) => symbol.clone(),
        (None, None) => return Err(err("no token identity".to_string())),
    };
    let mut token = TokenKey::new(symbol, desc.asset_class);
    token.contract_address = token_contract;

    Ok(BridgeEvent {
        event_id: format!("{}:{}", log.tx_id, log.log_index),
        tx_id: log.tx_id,
        log_index: log.log_index,
        receiver,
        token,
        amount,
        token_ids,
        timestamp: log.block_timestamp,
        block_number: log.block_number,
        direction: desc.direction,
        chain: spec.source_chain().clone(),
    })
}

fn decode_uint_array(data: &[u8], head_index: usize) -> Result<Vec<TokenId>, String> {
    let read_word = |offset: usize| -> Option<U256> {
        let end = offset.checked_add(32)?;
        let bytes = data.get(offset..end)?;
        let mut w = [0u8; 32];
        w.copy_from_slice(bytes);
        Some(U256::from_be_bytes(w))
    };
    let offset = read_word(head_index * 32).ok_or("missing array offset")?;
    let offset: usize = offset
        .try_into()
        .ok()
        .filter(|o: &usize| o.is_multiple_of(32) && *o < data.len())
        .ok_or("array offset out of bounds")?;
    let len = read_word(offset).ok_or("missing array length")?;
    let available = (data.len() - offset - 32) / 32;
    let len: usize = len
        .try_into()
        .ok()
        .filter(|l: &usize| *l <= available)
        .ok_or("array length exceeds data")?;
    Ok((0..len)
        .map(|i| {
            let start = offset + 32 + i * 32;
            let mut w = [0u8; 32];
            w.copy_from_slice(&data[start..start + 32]);
            TokenId::from_word(&w)
        })
        .collect())
}

/// Splits a non-fungible event into one event per token id, suffixing the
/// event id with the ordinal. Other events pass through unchanged.
pub fn explode_batch(event: BridgeEvent) -> Vec<BridgeEvent> {
    if event.token.class != crate::model::AssetClass::NonFungible {
        return vec![event];
    }
    event
        .token_ids
        .iter()
        .enumerate()
        .map(|(i, id)| BridgeEvent {
            event_id: format!("{}#{i}", event.event_id),
            token_ids: vec![*id],
            ..event.clone()
        })
        .collect()
}

/// Field values for forward-encoding a log; the inverse of decoding.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EventFields {
    pub receiver: AccountAddress,
    pub token_contract: Option<AccountAddress>,
    pub amount: Option<Amount>,
    pub token_ids: Vec<TokenId>,
    /// Fills fields with role `Other` (depositor, sender).
    pub counterparty: AccountAddress,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LogMeta {
    pub tx_id: TxId,
    pub log_index: u64,
    pub block_number: u64,
    pub block_timestamp: Timestamp,
}

/// ABI-encodes `fields` into a log following `desc`. The emitter is the
/// descriptor's contract, or the token contract for emitter-slot layouts.
pub fn encode_log(
    desc: &EventDescriptor,
    spec: &BridgeSpec,
    fields: &EventFields,
    meta: LogMeta,
) -> RawLog {
    let mut topics = vec![Word::default(); desc.topic_count()];
    topics[0] = desc.topic0;
    let head_words = desc
        .fields
        .iter()
        .filter_map(|f| match f.slot {
            Slot::Data(k) => Some(k as usize + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let mut head = vec![0u8; head_words * 32];
    let mut tail: Vec<u8> = Vec::new();
    let mut emitter = desc
        .contract_role
        .as_ref()
        .and_then(|r| spec.contract(r))
        .unwrap_or_default();

    for field in &desc.fields {
        let word: [u8; 32] = match field.role {
            FieldRole::Receiver => fields.receiver.to_word(),
            FieldRole::TokenContract => fields.token_contract.unwrap_or_default().to_word(),
            FieldRole::Amount => fields.amount.unwrap_or_default().to_word(),
            FieldRole::TokenId => fields.token_ids.first().copied().unwrap_or_default().to_word(),
            FieldRole::Other => fields.counterparty.to_word(),
            FieldRole::TokenIdList => {
                let offset = head.len() + tail.len();
                tail.extend_from_slice(&U256::from(fields.token_ids.len()).to_be_bytes::<32>());
                for id in &fields.token_ids {
                    tail.extend_from_slice(&id.to_word());
                }
                U256::from(offset).to_be_bytes()
            }
        };
        match field.slot {
            Slot::Topic(k) => topics[k as usize] = Word(word),
            Slot::Data(k) => head[k as usize * 32..k as usize * 32 + 32].copy_from_slice(&word),
            Slot::Emitter => {
                let mut a = [0u8; 20];
                a.copy_from_slice(&word[12..]);
                emitter = AccountAddress(a);
            }
        }
    }
    head.extend_from_slice(&tail);

    RawLog {
        address: emitter,
        topics,
        data: HexBytes(head),
        tx_id: meta.tx_id,
        log_index: meta.log_index,
        block_number: meta.block_number,
        block_timestamp: meta.block_timestamp,
    }
}
