// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright The Bridgetrace Authors

pub mod config;
pub mod store;
pub mod ingest;
pub mod manifest;
pub mod reports;
pub mod cli;
