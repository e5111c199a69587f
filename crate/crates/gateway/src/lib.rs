//! Serving and orchestration for editable-summary recommendation: a TOML
//! configuration, an append-only summary store with lineage, the HTTP API
//! used by interactive clients, and the `tears` command line.

pub mod cli;
pub mod config;
pub mod server;
pub mod service;
pub mod store;
