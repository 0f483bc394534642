// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! JSON-RPC log provider (`eth_getLogs`).

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use bridgetrace_core::decode::{HexBytes, RawLog};
use bridgetrace_core::{AccountAddress, Timestamp, TxId, Word};
use serde_json::{json, Value};

use super::{LogProvider, ProviderError};

pub struct RpcLogProvider {
    url: String,
    agent: ureq::Agent,
    block_times: Mutex<BTreeMap<u64, u64>>,
}

impl RpcLogProvider {
    pub fn new(url: &str) -> Self {
        Self {
            url: url.to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
            block_times: Mutex::new(BTreeMap::new()),
        }
    }

    fn request(&self, method: &str, params: Value) -> Result<Value, ProviderError> {
        let body = json!({"jsonrpc": "2.0", "id": 1, "method": method, "params": params});
        let response = match self.agent.post(&self.url).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(if code == 429 || code >= 500 {
                    ProviderError::Transient(format!("HTTP {code}"))
                } else {
                    ProviderError::Fatal(format!("HTTP {code}: {text}"))
                });
            }
            Err(e) => return Err(ProviderError::Transient(e.to_string())),
        };
        let value: Value = response
            .into_json()
            .map_err(|e| ProviderError::Transient(format!("unreadable response: {e}")))?;
        if let Some(err) = value.get("error") {
            return Err(classify_rpc_error(err));
        }
        value
            .get("result")
            .cloned()
            .ok_or_else(|| ProviderError::Fatal("response has no result".into()))
    }

    fn block_time(&self, block: u64) -> Result<u64, ProviderError> {
        if let Some(t) = self.block_times.lock().unwrap().get(&block) {
            return Ok(*t);
        }
        let result = self.request("eth_getBlockByNumber", json!([format!("{block:#x}"), false]))?;
        let ts = result
            .get("timestamp")
            .and_then(Value::as_str)
            .and_then(parse_quantity)
            .ok_or_else(|| ProviderError::Fatal(format!("block {block} has no timestamp")))?;
        self.block_times.lock().unwrap().insert(block, ts);
        Ok(ts)
    }
}

/// Maps a JSON-RPC error object onto the retry classes.
pub fn classify_rpc_error(err: &Value) -> ProviderError {
    let code = err.get("code").and_then(Value::as_i64).unwrap_or(0);
    let message = err.get("message").and_then(Value::as_str).unwrap_or("").to_string();
    let lower = message.to_ascii_lowercase();
    if code == -32005
        || lower.contains("more than")
        || lower.contains("too many")
        || lower.contains("limit exceeded")
        || lower.contains("range is too large")
        || lower.contains("block range")
    {
        ProviderError::TooLarge(message)
    } else if code == -32603 || lower.contains("timeout") || lower.contains("rate limit") {
        ProviderError::Transient(message)
    } else {
        ProviderError::Fatal(format!("rpc error {code}: {message}"))
    }
}

fn parse_quantity(s: &str) -> Option<u64> {
    u64::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

/// Parses one `eth_getLogs` entry. The timestamp is `None` when the node
/// omits `blockTimestamp`.
pub fn parse_rpc_log(v: &Value) -> Result<(RawLog, Option<u64>), ProviderError> {
    let bad = |what: &str| ProviderError::Fatal(format!("log entry has bad {what}: {v}"));
    let text = |key: &str| v.get(key).and_then(Value::as_str).ok_or_else(|| bad(key));
    let address: AccountAddress = text("address")?.parse().map_err(|_| bad("address"))?;
    let topics = v
        .get("topics")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("topics"))?
        .iter()
        .map(|t| t.as_str().and_then(|s| s.parse::<Word>().ok()).ok_or_else(|| bad("topics")))
        .collect::<Result<Vec<_>, _>>()?;
    let data = text("data")?;
    let data = HexBytes(hex::decode(data.strip_prefix("0x").ok_or_else(|| bad("data"))?).map_err(|_| bad("data"))?);
    let tx_id: TxId = text("transactionHash")?.parse().map_err(|_| bad("transactionHash"))?;
    let log_index = parse_quantity(text("logIndex")?).ok_or_else(|| bad("logIndex"))?;
    let block_number = parse_quantity(text("blockNumber")?).ok_or_else(|| bad("blockNumber"))?;
    let ts = v.get("blockTimestamp").and_then(Value::as_str).and_then(parse_quantity);
    Ok((
        RawLog {
            address,
            topics,
            data,
            tx_id,
            log_index,
            block_number,
            block_timestamp: Timestamp(ts.unwrap_or(0)),
        },
        ts,
    ))
}

impl LogProvider for RpcLogProvider {
    fn get_logs(&self, addresses: &[AccountAddress], from: u64, to: u64) -> Result<Vec<RawLog>, ProviderError> {
        let filter = json!([{
            "fromBlock": format!("{from:#x}"),
            "toBlock": format!("{to:#x}"),
            "address": addresses.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        }]);
        let result = self.request("eth_getLogs", filter)?;
        let entries = result
            .as_array()
            .ok_or_else(|| ProviderError::Fatal("eth_getLogs result is not an array".into()))?;
        let mut logs = Vec::with_capacity(entries.len());
        for entry in entries {
            if entry.get("removed").and_then(Value::as_bool) == Some(true) {
                continue;
            }
            let (mut log, ts) = parse_rpc_log(entry)?;
            if ts.is_none() {
                log.block_timestamp = Timestamp(self.block_time(log.block_number)?);
            }
            logs.push(log);
        }
        Ok(logs)
    }
}
