// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Matching core for tracing cross-chain transactions between two EVM
//! chains connected by a lock-and-mint / burn-and-withdraw bridge.
//!
//! The crate is `no_std` (with `alloc`) and free of IO: it decodes bridge
//! logs against a declarative [`spec::BridgeSpec`], matches events to
//! counterpart transfers, sweeps the matching tolerance, aggregates
//! analytics series, and generates synthetic traffic with ground truth.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod analytics;
pub mod decode;
pub mod error;
pub mod hash;
pub mod matching;
pub mod model;
pub mod pool;
pub mod sim;
pub mod spec;
pub mod tuning;

pub use error::{ArgumentError, DecodeError, ParseError, SpecError};
pub use model::{
    canonicalize_address, AccountAddress, Amount, AssetClass, BridgeEvent, ChainLabel,
    ChainTransfer, Direction, MethodId, Timestamp, TokenId, TokenKey, TxId, Word,
};
