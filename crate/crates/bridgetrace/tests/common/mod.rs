// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bridgetrace_core::decode::{encode_log, EventFields, HexBytes, LogMeta, RawLog, RawTransaction};
use bridgetrace_core::spec::{BridgeSpec, EventDescriptor, FieldRole};
use bridgetrace_core::{AccountAddress, Amount, Timestamp, TokenId, TxId};
use rand::{Rng, RngCore};
use serde_json::{json, Value};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_bridgetrace"))
}

/// Runs the binary; returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn only_file(dir: &Path, suffix: &str) -> PathBuf {
    let mut hits: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    assert_eq!(hits.len(), 1, "expected one {suffix} in {}", dir.display());
    hits.pop().unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Random field values fitting `desc`.
pub fn random_fields(desc: &EventDescriptor, spec: &BridgeSpec, rng: &mut impl RngCore) -> EventFields {
    let mut addr = || {
        let mut a = [0u8; 20];
        rng.fill_bytes(&mut a);
        AccountAddress(a)
    };
    let receiver = addr();
    let counterparty = addr();
    let random_contract = addr();
    let word = |rng: &mut dyn RngCore| {
        let mut w = [0u8; 32];
        rng.fill_bytes(&mut w);
        // Vary magnitudes so small and full-width values both occur.
        let zeros = (rng.next_u32() % 32) as usize;
        w[..zeros].fill(0);
        w
    };
    let token_contract = desc.field(FieldRole::TokenContract).map(|_| {
        if rng.random_bool(0.5) {
            *spec.tokens().keys().nth(rng.random_range(0..spec.tokens().len())).unwrap()
        } else {
            random_contract
        }
    });
    let amount = desc.field(FieldRole::Amount).map(|_| Amount::from_word(&word(rng)));
    let token_ids = if desc.field(FieldRole::TokenIdList).is_some() {
        let n = rng.random_range(1..8);
        (0..n).map(|_| TokenId::from_word(&word(rng))).collect()
    } else if desc.field(FieldRole::TokenId).is_some() {
        vec![TokenId::from_word(&word(rng))]
    } else {
        vec![]
    };
    EventFields {
        receiver,
        token_contract,
        amount,
        token_ids,
        counterparty,
    }
}

pub fn random_meta(rng: &mut impl RngCore) -> LogMeta {
    let mut tx = [0u8; 32];
    rng.fill_bytes(&mut tx);
    let block = rng.random_range(0..30_000_000u64);
    LogMeta {
        tx_id: TxId(tx),
        log_index: rng.random_range(0..1_000),
        block_number: block,
        block_timestamp: Timestamp(1_500_000_000 + block * 12),
    }
}

/// A transaction calling `selector` with some argument bytes.
pub fn transaction(tx_id: TxId, selector: [u8; 4], block: u64) -> RawTransaction {
    let mut input = selector.to_vec();
    input.extend_from_slice(&[0xab; 36]);
    RawTransaction {
        tx_id,
        from: AccountAddress([0x11; 20]),
        to: AccountAddress([0x22; 20]),
        input: HexBytes(input),
        value: Amount::default(),
        block_number: block,
        block_timestamp: Timestamp(1_500_000_000 + block * 12),
    }
}

/// Bridge logs of every descriptor spread over `0..blocks`, one per block
/// at most, emitted by the descriptor's contract.
pub fn bridge_logs(spec: &BridgeSpec, blocks: u64, every: u64, rng: &mut impl RngCore) -> Vec<RawLog> {
    let descs: Vec<&EventDescriptor> = spec.events().iter().filter(|d| d.contract_role.is_some()).collect();
    (0..blocks)
        .step_by(every as usize)
        .enumerate()
        .map(|(i, block)| {
            let desc = descs[i % descs.len()];
            let fields = random_fields(desc, spec, rng);
            let mut meta = random_meta(rng);
            meta.block_number = block;
            meta.block_timestamp = Timestamp(1_600_000_000 + block * 12);
            meta.log_index = (i % 3) as u64;
            encode_log(desc, spec, &fields, meta)
        })
        .collect()
}

fn hex_quantity(n: u64) -> String {
    format!("{n:#x}")
}

pub fn rpc_log_json(l: &RawLog) -> Value {
    json!({
        "address": l.address.to_string(),
        "topics": l.topics.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
        "data": format!("0x{}", hex::encode(&l.data.0)),
        "transactionHash": l.tx_id.to_string(),
        "logIndex": hex_quantity(l.log_index),
        "blockNumber": hex_quantity(l.block_number),
        "blockTimestamp": hex_quantity(l.block_timestamp.0),
        "removed": false
    })
}

pub struct Server {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

/// Tiny HTTP/1.1 server. The handler gets the request sequence number
/// (from 1), the request target, and the body; it returns status and body.
pub fn spawn_http<F>(handler: F) -> Server
where
    F: Fn(usize, &str, &[u8]) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                continue;
            }
            let target = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let n = counter.fetch_add(1, Ordering::SeqCst) + 1;
            let (status, payload) = handler(n, &target, &body);
            let reason = if status == 200 { "OK" } else { "Error" };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    Server { url, requests }
}

/// JSON-RPC node answering `eth_getLogs` from a fixed log set. Requests
/// for which `fail(n)` holds get HTTP 503.
pub fn spawn_rpc(logs: Vec<RawLog>, fail: impl Fn(usize) -> bool + Send + 'static) -> Server {
    spawn_http(move |n, _, body| {
        if fail(n) {
            return (503, "busy".into());
        }
        let req: Value = serde_json::from_slice(body).unwrap();
        let p = &req["params"][0];
        let q = |k: &str| u64::from_str_radix(p[k].as_str().unwrap().trim_start_matches("0x"), 16).unwrap();
        let (from, to) = (q("fromBlock"), q("toBlock"));
        let wanted: Vec<String> = p["address"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a.as_str().unwrap().to_string())
            .collect();
        let result: Vec<Value> = logs
            .iter()
            .filter(|l| (from..=to).contains(&l.block_number) && wanted.contains(&l.address.to_string()))
            .map(rpc_log_json)
            .collect();
        (200, json!({"jsonrpc": "2.0", "id": req["id"], "result": result}).to_string())
    })
}

fn query_param<'a>(target: &'a str, key: &str) -> Option<&'a str> {
    target
        .split_once('?')?
        .1
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

/// Explorer account API serving `tokentx` rows per address. Addresses in
/// `broken` always get a fatal error response.
pub fn spawn_explorer(rows: Vec<Value>, broken: Vec<String>) -> Server {
    spawn_http(move |_, target, _| {
        let address = query_param(target, "address").unwrap_or("").to_ascii_lowercase();
        if broken.contains(&address) {
            return (200, json!({"status": "0", "message": "NOTOK", "result": "Error! Invalid address format"}).to_string());
        }
        let page: usize = query_param(target, "page").and_then(|v| v.parse().ok()).unwrap_or(1);
        let offset: usize = query_param(target, "offset").and_then(|v| v.parse().ok()).unwrap_or(10);
        let mine: Vec<&Value> = rows
            .iter()
            .filter(|r| r["to"].as_str() == Some(&address) || r["from"].as_str() == Some(&address))
            .collect();
        let start = (page - 1) * offset;
        let slice: Vec<&Value> = mine.iter().skip(start).take(offset).copied().collect();
        if slice.is_empty() {
            return (200, json!({"status": "0", "message": "No transactions found", "result": []}).to_string());
        }
        (200, json!({"status": "1", "message": "OK", "result": slice}).to_string())
    })
}
