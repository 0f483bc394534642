// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! Block-explorer account API (`tokentx` / `tokennfttx`) transfer provider.

use std::time::Duration;

use bridgetrace_core::{AccountAddress, Amount, AssetClass, ChainLabel, ChainTransfer, Timestamp, TokenId, TokenKey, TxId};
use serde_json::Value;

use super::{ProviderError, TransferPage, TransferProvider, TransferWindow};

pub struct ExplorerTransferProvider {
    url: String,
    api_key: Option<String>,
    chain: ChainLabel,
    agent: ureq::Agent,
}

impl ExplorerTransferProvider {
    pub fn new(url: &str, api_key: Option<String>, chain: impl Into<String>) -> Self {
        Self {
            url: url.to_string(),
            api_key,
            chain: ChainLabel::new(chain),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }
}

fn action(class: AssetClass) -> &'static str {
    match class.match_family() {
        AssetClass::NonFungible => "tokennfttx",
        _ => "tokentx",
    }
}

/// Parses an explorer response body into rows. `status = "0"` with an empty
/// result means no rows; throttling messages are transient.
pub fn parse_explorer_response(
    body: &Value,
    class: AssetClass,
    chain: &ChainLabel,
) -> Result<Vec<ChainTransfer>, ProviderError> {
    let status = body.get("status").and_then(Value::as_str).unwrap_or("");
    let message = body.get("message").and_then(Value::as_str).unwrap_or("");
    let result = body.get("result");
    if status != "1" {
        let detail = result.and_then(Value::as_str).unwrap_or(message);
        if message.starts_with("No transactions found") || result.and_then(Value::as_array).is_some_and(|a| a.is_empty()) {
            return Ok(Vec::new());
        }
        let lower = detail.to_ascii_lowercase();
        return Err(if lower.contains("rate limit") || lower.contains("timeout") || lower.contains("busy") {
            ProviderError::Transient(detail.to_string())
        } else {
            ProviderError::Fatal(detail.to_string())
        });
    }
    let rows = result
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Fatal("explorer result is not an array".into()))?;
    rows.iter().map(|row| parse_row(row, class, chain)).collect()
}

fn parse_row(row: &Value, class: AssetClass, chain: &ChainLabel) -> Result<ChainTransfer, ProviderError> {
    let bad = |what: &str| ProviderError::Fatal(format!("explorer row has bad {what}: {row}"));
    let text = |key: &str| row.get(key).and_then(Value::as_str).ok_or_else(|| bad(key));
    let number = |key: &str| text(key)?.parse::<u64>().map_err(|_| bad(key));
    let nft = class.match_family() == AssetClass::NonFungible;
    let symbol = row
        .get("tokenSymbol")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .map_or_else(|| text("contractAddress").map(str::to_string), Ok)?;
    Ok(ChainTransfer {
        tx_id: text("hash")?.parse::<TxId>().map_err(|_| bad("hash"))?,
        to_address: text("to")?.parse::<AccountAddress>().map_err(|_| bad("to"))?,
        from_address: text("from")?.parse::<AccountAddress>().map_err(|_| bad("from"))?,
        token: TokenKey::new(symbol, if nft { AssetClass::NonFungible } else { AssetClass::Fungible }),
        amount: if nft { None } else { Some(text("value")?.parse::<Amount>().map_err(|_| bad("value"))?) },
        token_id: if nft { Some(text("tokenID")?.parse::<TokenId>().map_err(|_| bad("tokenID"))?) } else { None },
        timestamp: Timestamp(number("timeStamp")?),
        block_number: number("blockNumber")?,
        chain: chain.clone(),
        truncated: false,
    })
}

impl TransferProvider for ExplorerTransferProvider {
    fn transfers(
        &self,
        address: AccountAddress,
        class: AssetClass,
        window: TransferWindow,
        offset: usize,
        limit: usize,
    ) -> Result<TransferPage, ProviderError> {
        let page = offset / limit + 1;
        let mut request = self
            .agent
            .get(&self.url)
            .query("module", "account")
            .query("action", action(class))
            .query("address", &address.to_string())
            .query("startblock", &window.start_block.to_string())
            .query("endblock", &window.end_block.min(i64::MAX as u64).to_string())
            .query("page", &page.to_string())
            .query("offset", &limit.to_string())
            .query("sort", "asc");
        if let Some(key) = &self.api_key {
            request = request.query("apikey", key);
        }
        let body: Value = match request.call() {
            Ok(r) => r
                .into_json()
                .map_err(|e| ProviderError::Transient(format!("unreadable response: {e}")))?,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(ProviderError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, _)) => return Err(ProviderError::Fatal(format!("HTTP {code}"))),
            Err(e) => return Err(ProviderError::Transient(e.to_string())),
        };
        let rows = parse_explorer_response(&body, class, &self.chain)?;
        Ok(TransferPage {
            has_more: rows.len() == limit,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn row() -> Value {
        json!({
            "blockNumber": "100", "timeStamp": "1600000000",
            "hash": format!("0x{}", "cd".repeat(32)),
            "from": "0x0000000000000000000000000000000000000000",
            "to": "0x1111111111111111111111111111111111111111",
            "value": "250000000", "tokenID": "7", "tokenSymbol": "USDC",
            "contractAddress": "0x2791bca1f2de4661ed88a30c99a7a9449aa84174"
        })
    }

    #[test]
    fn parses_fungible_and_nft_rows() {
        let chain = ChainLabel::new("polygon");
        let body = json!({"status": "1", "message": "OK", "result": [row()]});
        let rows = parse_explorer_response(&body, AssetClass::Fungible, &chain).unwrap();
        assert_eq!(rows[0].amount, Some(Amount::from(250_000_000u64)));
        assert_eq!(rows[0].token_id, None);
        assert_eq!(rows[0].timestamp, Timestamp(1_600_000_000));
        let rows = parse_explorer_response(&body, AssetClass::NonFungible, &chain).unwrap();
        assert_eq!(rows[0].token_id, Some(TokenId::from(7u64)));
    }

    #[test]
    fn status_messages_are_classified() {
        let chain = ChainLabel::new("polygon");
        let none = json!({"status": "0", "message": "No transactions found", "result": []});
        assert!(parse_explorer_response(&none, AssetClass::Fungible, &chain).unwrap().is_empty());
        let throttled = json!({"status": "0", "message": "NOTOK", "result": "Max rate limit reached"});
        assert!(matches!(
            parse_explorer_response(&throttled, AssetClass::Fungible, &chain),
            Err(ProviderError::Transient(_))
        ));
        let bad_key = json!({"status": "0", "message": "NOTOK", "result": "Invalid API Key"});
        assert!(matches!(
            parse_explorer_response(&bad_key, AssetClass::Fungible, &chain),
            Err(ProviderError::Fatal(_))
        ));
    }
}
