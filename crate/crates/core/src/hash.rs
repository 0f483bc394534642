// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

use tiny_keccak::{Hasher, Keccak};

use crate::model::{MethodId, Word};

pub fn keccak256(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Keccak::v256();
    hasher.update(bytes);
    let mut out = [0u8; 32];
    hasher.finalize(&mut out);
    out
}

/// topic0 of an event with the given canonical signature, e.g.
/// `Transfer(address,address,uint256)`.
pub fn event_topic(signature: &str) -> Word {
    Word(keccak256(signature.as_bytes()))
}

/// Four-byte selector of a function signature such as `exit(bytes)`.
pub fn function_selector(signature: &str) -> MethodId {
    let digest = keccak256(signature.as_bytes());
    MethodId([digest[0], digest[1], digest[2], digest[3]])
}
