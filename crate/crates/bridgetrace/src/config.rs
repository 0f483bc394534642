// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

//! TOML form of a bridge spec.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bridgetrace_core::spec::{BridgeSpec, BridgeSpecParts, EventDescriptor, FieldLayout, FieldRole, Slot};
use bridgetrace_core::{AccountAddress, AssetClass, ChainLabel, Direction, MethodId, SpecError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed spec: {0}")]
    Syntax(String),
    #[error(transparent)]
    Invalid(#[from] SpecError),
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    version: String,
    withdrawal_method_id: String,
    #[serde(default)]
    token_equivalences: Vec<[String; 2]>,
    chains: Chains,
    contracts: BTreeMap<String, String>,
    #[serde(default)]
    tokens: BTreeMap<String, String>,
    events: Vec<EventEntry>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Chains {
    source: String,
    destination: String,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventEntry {
    name: String,
    signature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contract: Option<String>,
    asset_class: String,
    direction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symbol: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    requires_method_id: bool,
    fields: Vec<FieldEntry>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldEntry {
    name: String,
    slot: String,
    role: FieldRole,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn syntax(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Syntax(e.to_string())
}

/// Parses and validates a spec from TOML text.
pub fn parse_spec(text: &str) -> Result<BridgeSpec, ConfigError> {
    let file: SpecFile = toml::from_str(text).map_err(syntax)?;

    let withdrawal_method_id: MethodId = file
        .withdrawal_method_id
        .parse()
        .map_err(|_| SpecError::BadMethodId(file.withdrawal_method_id.clone()))?;

    let mut contracts = BTreeMap::new();
    for (role, addr) in &file.contracts {
        contracts.insert(role.clone(), addr.parse::<AccountAddress>().map_err(SpecError::from)?);
    }
    let mut tokens = BTreeMap::new();
    for (addr, symbol) in &file.tokens {
        tokens.insert(addr.parse::<AccountAddress>().map_err(SpecError::from)?, symbol.clone());
    }

    let mut events = Vec::with_capacity(file.events.len());
    for e in &file.events {
        let mut fields = Vec::with_capacity(e.fields.len());
        for f in &e.fields {
            let slot: Slot = f.slot.parse().map_err(SpecError::from)?;
            fields.push(FieldLayout::new(&f.name, slot, f.role));
        }
        let class: AssetClass = e.asset_class.parse().map_err(SpecError::from)?;
        let direction: Direction = e.direction.parse().map_err(SpecError::from)?;
        let mut d = EventDescriptor::new(&e.name, &e.signature, e.contract.as_deref(), fields, class, direction);
        if let Some(symbol) = &e.symbol {
            d = d.with_symbol(symbol);
        }
        if e.requires_method_id {
            d = d.corroborated();
        }
        events.push(d);
    }

    let parts = BridgeSpecParts {
        version: file.version,
        source_chain: ChainLabel::new(file.chains.source),
        destination_chain: ChainLabel::new(file.chains.destination),
        contracts,
        events,
        token_equivalences: file
            .token_equivalences
            .into_iter()
            .map(|[a, b]| (a, b))
            .collect(),
        withdrawal_method_id,
        tokens,
    };
    Ok(BridgeSpec::new(parts)?)
}

pub fn load_spec(path: &Path) -> Result<BridgeSpec, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec(&text)
}

/// TOML text that [`parse_spec`] turns back into `spec`.
pub fn render_spec(spec: &BridgeSpec) -> String {
    let p = spec.parts();
    let file = SpecFile {
        version: p.version.clone(),
        withdrawal_method_id: p.withdrawal_method_id.to_string(),
        token_equivalences: p
            .token_equivalences
            .iter()
            .map(|(a, b)| [a.clone(), b.clone()])
            .collect(),
        chains: Chains {
            source: p.source_chain.as_str().to_string(),
            destination: p.destination_chain.as_str().to_string(),
        },
        contracts: p
            .contracts
            .iter()
            .map(|(r, a)| (r.clone(), a.to_string()))
            .collect(),
        tokens: p.tokens.iter().map(|(a, s)| (a.to_string(), s.clone())).collect(),
        events: p
            .events
            .iter()
            .map(|d| EventEntry {
                name: d.name.clone(),
                signature: d.signature.clone(),
                contract: d.contract_role.clone(),
                asset_class: d.asset_class.as_str().to_string(),
                direction: d.direction.as_str().to_string(),
                symbol: d.symbol.clone(),
                requires_method_id: d.requires_method_id,
                fields: d
                    .fields
                    .iter()
                    .map(|f| FieldEntry {
                        name: f.name.clone(),
                        slot: f.slot.to_string(),
                        role: f.role,
                    })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("spec file model always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use bridgetrace_core::spec::default_polygon_pos_spec;

    const SHIPPED: &str = include_str!("../specs/polygon-pos.conf");

    #[test]
    fn shipped_spec_equals_builtin_default() {
        let spec = parse_spec(SHIPPED).unwrap();
        assert_eq!(spec, default_polygon_pos_spec());
        assert_eq!(spec.withdrawal_method_id().to_string(), "0x3805550f");
    }

    #[test]
    fn render_round_trip() {
        let spec = default_polygon_pos_spec();
        assert_eq!(parse_spec(&render_spec(&spec)).unwrap(), spec);
    }

    #[test]
    fn duplicate_topic_is_rejected() {
        let mut doc: toml::Table = toml::from_str(SHIPPED).unwrap();
        let events = doc["events"].as_array_mut().unwrap();
        let mut copy = events[0].clone();
        copy.as_table_mut()
            .unwrap()
            .insert("contract".into(), "erc20-bridge".into());
        events.push(copy);
        let err = parse_spec(&toml::to_string(&doc).unwrap()).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(SpecError::DuplicateTopic { .. })), "{err}");
    }

    #[test]
    fn missing_receiver_is_rejected() {
        let mut doc: toml::Table = toml::from_str(SHIPPED).unwrap();
        let events = doc["events"].as_array_mut().unwrap();
        let erc20 = events
            .iter_mut()
            .find(|e| e["name"].as_str() == Some("LockedERC20"))
            .unwrap();
        let fields = erc20["fields"].as_array_mut().unwrap();
        fields.retain(|f| f["role"].as_str() != Some("receiver"));
        let err = parse_spec(&toml::to_string(&doc).unwrap()).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(SpecError::BadLayout { .. })), "{err}");
    }

    #[test]
    fn malformed_selector_is_rejected() {
        let text = SHIPPED.replace("0x3805550f", "0x3805550");
        assert!(matches!(
            parse_spec(&text).unwrap_err(),
            ConfigError::Invalid(SpecError::BadMethodId(_))
        ));
        let text = SHIPPED.replace("0x3805550f", "0x3805550f00");
        assert!(parse_spec(&text).is_err());
    }

    #[test]
    fn addresses_are_canonicalized() {
        let spec = parse_spec(SHIPPED).unwrap();
        let plasma = spec.contract("plasma-bridge").unwrap();
        assert_eq!(plasma.to_string(), "0xa0c68c638235ee32657e8f720a23cec1bfc77c77");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("bogus = 1\n{SHIPPED}");
        assert!(matches!(parse_spec(&text).unwrap_err(), ConfigError::Syntax(_)));
    }
}
