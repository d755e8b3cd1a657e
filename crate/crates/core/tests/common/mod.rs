#![allow(dead_code)]

use std::path::PathBuf;

use romschwarz::config::RunConfig;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn tiny_config() -> RunConfig {
    RunConfig::load(&fixture("tiny.toml")).expect("tiny fixture parses")
}
