// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

use alloc::string::String;

use thiserror::Error;

use crate::model::{AssetClass, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed {what}: {input:?}")]
    Malformed { what: &'static str, input: String },
    #[error("record {id} violates {class} field rules")]
    ClassMismatch { id: String, class: AssetClass },
}

/// Bridge deployment description failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("duplicate topic0 {topic0} shared by events {first} and {second}")]
    DuplicateTopic {
        topic0: String,
        first: String,
        second: String,
    },
    #[error("event {event} references contract role {role:?} which is not configured")]
    MissingRole { event: String, role: String },
    #[error("required contract role {0:?} is missing")]
    MissingRequiredRole(String),
    #[error("contracts {first:?} and {second:?} share address {address}")]
    DuplicateContract {
        first: String,
        second: String,
        address: String,
    },
    #[error("event {event}: {reason}")]
    BadLayout { event: String, reason: String },
    #[error("malformed withdrawal method id {0:?}")]
    BadMethodId(String),
    #[error("bad token equivalence {0:?}")]
    BadEquivalence(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A log matched a configured event but its payload does not fit the layout.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot decode {event} in tx {tx_id} log {log_index}: {reason}")]
pub struct DecodeError {
    pub event: String,
    pub tx_id: TxId,
    pub log_index: u64,
    pub reason: String,
}

/// Caller-supplied arguments are outside an operation's domain.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArgumentError {
    #[error("sample size {requested} exceeds population {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("tolerance grid is empty")]
    EmptyGrid,
    #[error("tolerance grid must be strictly increasing and positive")]
    UnsortedGrid,
    #[error("time tolerance must be greater than zero")]
    ZeroTolerance,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("report and ground truth cover different events: {0}")]
    EventSetMismatch(String),
    #[error("threshold must be greater than zero")]
    ZeroThreshold,
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
}
