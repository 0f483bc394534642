// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Building the event and candidate pools that feed the matcher.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::decode::{is_withdrawal_claim, RawTransaction};
use crate::model::{AccountAddress, AssetClass, BridgeEvent, ChainTransfer, Direction};
use crate::spec::BridgeSpec;

/// Distinct receivers of deposit-direction events.
pub fn extract_depositor_set(events: &[BridgeEvent]) -> BTreeSet<AccountAddress> {
    events
        .iter()
        .filter(|e| e.direction == Direction::Deposit)
        .map(|e| e.receiver)
        .collect()
}

/// Keeps withdrawals whose receiver previously deposited, in input order.
pub fn filter_withdrawals_by_depositors(
    withdrawals: &[BridgeEvent],
    depositors: &BTreeSet<AccountAddress>,
) -> Vec<BridgeEvent> {
    withdrawals
        .iter()
        .filter(|w| depositors.contains(&w.receiver))
        .cloned()
        .collect()
}

/// A decoded source-chain exit together with whether its enclosing
/// transaction carries the withdrawal selector.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExitRecord {
    pub event: BridgeEvent,
    pub corroborated: bool,
}

impl ExitRecord {
    pub fn new(event: BridgeEvent, tx: Option<&RawTransaction>, spec: &BridgeSpec) -> Self {
        let corroborated = tx
            .map(|tx| tx.tx_id == event.tx_id && is_withdrawal_claim(tx, spec))
            .unwrap_or(false);
        Self {
            event,
            corroborated,
        }
    }

    /// Fungible exits arrive as plain token transfers and only count when
    /// corroborated; native and non-fungible exits have dedicated events.
    pub fn admissible(&self) -> bool {
        self.event.token.class != AssetClass::Fungible || self.corroborated
    }

    /// The exit as a candidate transfer to its receiver.
    pub fn into_transfer(self, spec: &BridgeSpec) -> ChainTransfer {
        let event = self.event;
        ChainTransfer {
            tx_id: event.tx_id,
            to_address: event.receiver,
            from_address: event
                .token
                .contract_address
                .unwrap_or_else(|| spec.null_contract()),
            token: event.token,
            amount: event.amount,
            token_id: event.token_ids.first().copied(),
            timestamp: event.timestamp,
            block_number: event.block_number,
            chain: event.chain,
            truncated: false,
        }
    }
}

/// Admissible exits as candidate transfers.
pub fn exit_pool(exits: Vec<ExitRecord>, spec: &BridgeSpec) -> Vec<ChainTransfer> {
    exits
        .into_iter()
        .filter(ExitRecord::admissible)
        .map(|e| e.into_transfer(spec))
        .collect()
}

/// Destination-chain transfers into the null contract, as withdrawal
/// events whose receiver is the burning address.
pub fn burn_events(transfers: &[ChainTransfer], spec: &BridgeSpec) -> Vec<BridgeEvent> {
    let null = spec.null_contract();
    transfers
        .iter()
        .enumerate()
        .filter(|(_, t)| t.to_address == null && t.from_address != null)
        .map(|(i, t)| BridgeEvent {
            event_id: format!("{}:burn:{i}", t.tx_id),
            tx_id: t.tx_id,
            log_index: i as u64,
            receiver: t.from_address,
            token: t.token.clone(),
            amount: t.amount,
            token_ids: t.token_id.into_iter().collect(),
            timestamp: t.timestamp,
            block_number: t.block_number,
            direction: Direction::Withdrawal,
            chain: t.chain.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::HexBytes;
    use crate::model::{Amount, ChainLabel, Timestamp, TokenKey, TxId};
    use crate::spec::default_polygon_pos_spec;
    use alloc::vec;

    fn ev(i: u8, receiver: u8, direction: Direction) -> BridgeEvent {
        BridgeEvent {
            event_id: format!("e{i}"),
            tx_id: TxId([i; 32]),
            log_index: 0,
            receiver: AccountAddress([receiver; 20]),
            token: TokenKey::new("ETH", AssetClass::Native),
            amount: Some(Amount::from(i as u64)),
            token_ids: vec![],
            timestamp: Timestamp(i as u64),
            block_number: i as u64,
            direction,
            chain: ChainLabel::new("ethereum"),
        }
    }

    #[test]
    fn depositor_set_dedups() {
        let events: Vec<_> = [1, 2, 1, 3, 2]
            .iter()
            .enumerate()
            .map(|(i, r)| ev(i as u8, *r, Direction::Deposit))
            .collect();
        let set = extract_depositor_set(&events);
        assert_eq!(set.len(), 3);
        assert!(set.len() < events.len());
        assert!(extract_depositor_set(&[]).is_empty());
    }

    #[test]
    fn withdrawal_filter() {
        let deposits = vec![ev(0, 1, Direction::Deposit), ev(1, 2, Direction::Deposit)];
        let withdrawals = vec![
            ev(2, 2, Direction::Withdrawal),
            ev(3, 9, Direction::Withdrawal),
            ev(4, 1, Direction::Withdrawal),
        ];
        let depositors = extract_depositor_set(&deposits);
        let kept = filter_withdrawals_by_depositors(&withdrawals, &depositors);
        assert_eq!(
            kept.iter().map(|e| e.event_id.as_str()).collect::<Vec<_>>(),
            ["e2", "e4"]
        );
        assert!(filter_withdrawals_by_depositors(&withdrawals, &BTreeSet::new()).is_empty());
        let all = filter_withdrawals_by_depositors(&withdrawals[..1], &depositors);
        assert_eq!(all, withdrawals[..1].to_vec());
    }

    #[test]
    fn fungible_exits_need_the_claim_selector() {
        let spec = default_polygon_pos_spec();
        let mut exit = ev(5, 1, Direction::Withdrawal);
        exit.token = TokenKey::new("USDC", AssetClass::Fungible);
        let claim = RawTransaction {
            tx_id: exit.tx_id,
            from: exit.receiver,
            to: AccountAddress([2; 20]),
            input: HexBytes(vec![0x38, 0x05, 0x55, 0x0f]),
            value: Amount::default(),
            block_number: 5,
            block_timestamp: Timestamp(5),
        };
        let plain = RawTransaction {
            input: HexBytes(vec![0xa9, 0x05, 0x9c, 0xbb]),
            ..claim.clone()
        };
        assert!(ExitRecord::new(exit.clone(), Some(&claim), &spec).admissible());
        assert!(!ExitRecord::new(exit.clone(), Some(&plain), &spec).admissible());
        assert!(!ExitRecord::new(exit.clone(), None, &spec).admissible());

        let ether = ev(6, 1, Direction::Withdrawal);
        assert!(ExitRecord::new(ether, None, &spec).admissible());

        let pool = exit_pool(
            vec![
                ExitRecord::new(exit.clone(), Some(&claim), &spec),
                ExitRecord::new(exit, Some(&plain), &spec),
            ],
            &spec,
        );
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].to_address, AccountAddress([1; 20]));
    }

    #[test]
    fn burns_are_transfers_into_the_null_contract() {
        let spec = default_polygon_pos_spec();
        let user = AccountAddress([4; 20]);
        let base = ChainTransfer {
            tx_id: TxId([1; 32]),
            to_address: user,
            from_address: AccountAddress::ZERO,
            token: TokenKey::new("WETH", AssetClass::Fungible),
            amount: Some(Amount::from(10u64)),
            token_id: None,
            timestamp: Timestamp(100),
            block_number: 1,
            chain: ChainLabel::new("polygon"),
            truncated: false,
        };
        let burn = ChainTransfer {
            tx_id: TxId([2; 32]),
            to_address: AccountAddress::ZERO,
            from_address: user,
            ..base.clone()
        };
        let events = burn_events(&[base, burn], &spec);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].receiver, user);
        assert_eq!(events[0].direction, Direction::Withdrawal);
    }
}
