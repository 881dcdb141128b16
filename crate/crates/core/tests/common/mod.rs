//! Shared fixtures: case loading and cached root relaxations.

use std::path::PathBuf;

use ropf_core::matpower::load_network;
use ropf_core::network::Network;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load_case(name: &str) -> Network {
    let path = data_dir().join(format!("{name}.m"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    load_network(&text).unwrap_or_else(|e| panic!("parse {name}: {e}"))
}
