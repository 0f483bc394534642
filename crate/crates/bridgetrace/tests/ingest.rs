// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

mod common;

use std::fs;
use std::path::{Path, PathBuf};

use bridgetrace::ingest::IngestCheckpoint;
use bridgetrace::manifest::RunManifest;
use bridgetrace::store;
use bridgetrace_core::decode::{encode_log, EventFields, LogMeta, RawLog, RawTransaction};
use bridgetrace_core::spec::default_polygon_pos_spec;
use bridgetrace_core::{AccountAddress, Amount, BridgeEvent, ChainTransfer, Timestamp, TxId};
use common::{bridge_logs, cli, only_file, s, spawn_explorer, spawn_rpc, transaction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const BLOCKS: u64 = 5_000;

fn fixture_logs() -> (Vec<RawLog>, Vec<RawTransaction>) {
    let spec = default_polygon_pos_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut logs = bridge_logs(&spec, BLOCKS, 7, &mut rng);
    // Two fungible exits from a registered token: one inside a claim call,
    // one a plain transfer.
    let usdc = *spec.tokens().iter().find(|(_, s)| s.as_str() == "USDC").unwrap().0;
    let transfer = spec.event("Transfer").unwrap();
    let mut txs = Vec::new();
    for (n, selector) in [(1u8, [0x38, 0x05, 0x55, 0x0f]), (2u8, [0xa9, 0x05, 0x9c, 0xbb])] {
        let tx_id = TxId([0xe0 + n; 32]);
        let fields = EventFields {
            receiver: AccountAddress([n; 20]),
            token_contract: Some(usdc),
            amount: Some(Amount::from(1_000u64 * n as u64)),
            token_ids: vec![],
            counterparty: AccountAddress([0x77; 20]),
        };
        let block = 100 * n as u64 + 1;
        let meta = LogMeta {
            tx_id,
            log_index: 9,
            block_number: block,
            block_timestamp: Timestamp(1_600_000_000 + block * 12),
        };
        logs.push(encode_log(transfer, &spec, &fields, meta));
        txs.push(transaction(tx_id, selector, block));
    }
    (logs, txs)
}

fn write_source(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("source.toml");
    fs::write(&p, body).unwrap();
    p
}

fn fixture_setup(dir: &Path) -> (PathBuf, PathBuf, usize) {
    let (logs, txs) = fixture_logs();
    store::write_atomic(&dir.join("logs.raw_log.v1.ndj"), &logs).unwrap();
    let txs_path = dir.join("txs.raw_tx.v1.ndj");
    store::write_atomic(&txs_path, &txs).unwrap();
    let source = write_source(
        dir,
        "kind = \"fixture\"\npath = \"logs.raw_log.v1.ndj\"\nrate_limit = 1000\ninitial_chunk_blocks = 300\n",
    );
    (source, txs_path, logs.len())
}

fn ingest_logs(source: &Path, out: &Path, extra: &[&str]) -> (i32, String, String) {
    let to = (BLOCKS - 1).to_string();
    let mut args = vec!["ingest", "--source", s(source), "--out", s(out), "--from-block", "0", "--to-block", &to];
    args.extend_from_slice(extra);
    cli(&args)
}

fn data_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["events", "transfers", "raw"] {
        let Ok(entries) = fs::read_dir(root.join(sub)) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_file() {
                out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fixture_ingest_is_deterministic_and_corroborates_exits() {
    let dir = tempfile::tempdir().unwrap();
    let (source, txs, n_logs) = fixture_setup(dir.path());
    let extra = ["--token-contracts", "--raw-txs", s(&txs)];
    let (code, out, err) = ingest_logs(&source, &dir.path().join("a"), &extra);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains(&format!("logs: {n_logs} ")), "{out}");
    let (code, _, _) = ingest_logs(&source, &dir.path().join("b"), &extra);
    assert_eq!(code, 0);
    let (a, b) = (data_files(&dir.path().join("a")), data_files(&dir.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let root = dir.path().join("a");
    let exits: Vec<ChainTransfer> =
        store::read_validated(&only_file(&root.join("transfers"), ".transfer.v1.ndj")).unwrap();
    let fungible: Vec<_> = exits.iter().filter(|t| t.token.class == bridgetrace_core::AssetClass::Fungible).collect();
    assert_eq!(fungible.len(), 1, "only the claim-call transfer is an exit");
    assert_eq!(fungible[0].to_address, AccountAddress([1; 20]));
    let deposits: Vec<BridgeEvent> =
        store::read_validated(&only_file(&root.join("events"), ".event.v1.ndj")).unwrap();
    assert!(!deposits.is_empty());
    let raw: Vec<RawLog> = store::read_validated(&only_file(&root.join("raw"), ".raw_log.v1.ndj")).unwrap();
    assert_eq!(raw.len(), n_logs);
    assert!(raw.windows(2).all(|w| (w[0].block_number, w[0].log_index) <= (w[1].block_number, w[1].log_index)));

    let m = RunManifest::load(&root.join("manifests/ingest.manifest.json")).unwrap();
    assert_eq!(m.input_digests.len(), 2);
    assert_eq!(m.output_digests.len(), 3);
}

#[test]
fn inverted_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (source, _, _) = fixture_setup(dir.path());
    let (code, _, err) = cli(&[
        "ingest", "--source", s(&source), "--out", s(dir.path()), "--from-block", "10", "--to-block", "5",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("inverted"), "{err}");
}

fn rpc_source(dir: &Path, url: &str) -> PathBuf {
    write_source(
        dir,
        &format!(
            "kind = \"rpc\"\nurl = \"{url}\"\nrate_limit = 1000\nmax_retries = 3\nbackoff_base_millis = 1\n\
             initial_chunk_blocks = 1000\nmax_chunk_blocks = 1000\n"
        ),
    )
}

#[test]
fn flaky_node_recovers_with_retries() {
    let dir = tempfile::tempdir().unwrap();
    let (logs, _) = fixture_logs();
    let server = spawn_rpc(logs.clone(), |n| n == 2 || n == 4);
    let source = rpc_source(dir.path(), &server.url);
    let (code, out, err) = ingest_logs(&source, &dir.path().join("out"), &["--token-contracts"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains(&format!("logs: {} ", logs.len())), "{out}");
    let m = RunManifest::load(&dir.path().join("out/manifests/ingest.manifest.json")).unwrap();
    assert_eq!(m.retries, 2);
}

#[test]
fn dead_node_leaves_a_resumable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (logs, _) = fixture_logs();

    let healthy = spawn_rpc(logs.clone(), |_| false);
    let reference = dir.path().join("reference");
    let (code, _, err) = ingest_logs(&rpc_source(dir.path(), &healthy.url), &reference, &[]);
    assert_eq!(code, 0, "{err}");

    let dying = spawn_rpc(logs.clone(), |n| n > 2);
    let resumed = dir.path().join("resumed");
    let (code, _, err) = ingest_logs(&rpc_source(dir.path(), &dying.url), &resumed, &[]);
    assert_eq!(code, 2, "{err}");
    let cp_path = resumed.join(format!("raw/scan-0_{}/checkpoint.json", BLOCKS - 1));
    let cp: IngestCheckpoint = serde_json::from_slice(&fs::read(&cp_path).unwrap()).unwrap();
    let last = cp.last_block_scanned.expect("some chunks committed");
    assert!(last < BLOCKS - 1);

    let (code, _, err) = ingest_logs(&rpc_source(dir.path(), &healthy.url), &resumed, &[]);
    assert_eq!(code, 0, "{err}");
    let strip = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        files.into_iter().filter(|(n, _)| !n.starts_with("raw/scan-")).collect()
    };
    assert_eq!(strip(data_files(&reference)), strip(data_files(&resumed)));
}

fn explorer_row(to: &AccountAddress, n: u64) -> serde_json::Value {
    json!({
        "blockNumber": (1_000 + n).to_string(),
        "timeStamp": (1_650_000_000 + n * 10).to_string(),
        "hash": format!("0x{:064x}", n + (to.0[0] as u64) * 1_000),
        "from": "0x0000000000000000000000000000000000000000",
        "to": to.to_string(),
        "value": (n + 1).to_string(),
        "tokenID": "",
        "tokenSymbol": "WETH",
        "contractAddress": "0x7ceb23fd6bc0add59e62ac25578270cff1b9f619"
    })
}

#[test]
fn address_histories_report_failures_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let good = AccountAddress([1; 20]);
    let heavy = AccountAddress([2; 20]);
    let broken = AccountAddress([3; 20]);
    let mut rows: Vec<_> = (0..3).map(|n| explorer_row(&good, n)).collect();
    rows.extend((0..6).map(|n| explorer_row(&heavy, n)));
    let server = spawn_explorer(rows, vec![broken.to_string()]);
    let source = write_source(
        dir.path(),
        &format!(
            "kind = \"explorer\"\nurl = \"{}/api\"\napi_key_name = \"ingest_test\"\nrate_limit = 1000\n\
             page_limit = 5\npage_size = 2\nmax_retries = 0\njobs = 2\n",
            server.url
        ),
    );
    let list = dir.path().join("addresses.txt");
    fs::write(&list, format!("# receivers\n{good}\n{heavy}\n\n{broken}\n")).unwrap();
    let out = dir.path().join("out");
    let args = ["ingest", "--source", s(&source), "--out", s(&out), "--addresses-file", s(&list), "--class", "fungible"];

    std::env::remove_var("BRIDGETRACE_API_KEY_INGEST_TEST");
    let (code, _, err) = cli(&args);
    assert_eq!(code, 1);
    assert!(err.contains("BRIDGETRACE_API_KEY_INGEST_TEST"), "{err}");

    std::env::set_var("BRIDGETRACE_API_KEY_INGEST_TEST", "test-key");
    let (code, _, err) = cli(&args);
    assert_eq!(code, 3, "{err}");
    let m = RunManifest::load(&out.join("manifests/ingest.manifest.json")).unwrap();
    assert_eq!(m.failed_addresses.len(), 1);
    assert!(m.failed_addresses.keys().next().unwrap().starts_with(&broken.to_string()));
    assert_eq!(m.truncated_addresses, vec![format!("{heavy} (fungible)")]);
    let transfers: Vec<ChainTransfer> =
        store::read_validated(&only_file(&out.join("transfers"), ".transfer.v1.ndj")).unwrap();
    assert_eq!(transfers.iter().filter(|t| t.to_address == good).count(), 3);
    let heavy_rows: Vec<_> = transfers.iter().filter(|t| t.to_address == heavy).collect();
    assert_eq!(heavy_rows.len(), 5);
    assert!(heavy_rows.iter().all(|t| t.truncated));
    assert!(transfers.iter().filter(|t| t.to_address == good).all(|t| !t.truncated));
}
