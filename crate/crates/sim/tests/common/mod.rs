#![allow(dead_code)]

use std::path::{Path, PathBuf};

use attest_sim::{load_config, ScenarioConfig};
use serde_json::Value;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

pub fn montecarlo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/montecarlo").join(name)
}

/// Every corpus scenario, sorted by file name.
pub fn corpus() -> Vec<(String, ScenarioConfig)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("corpus dir")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let cfg = load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (name, cfg)
        })
        .collect()
}

pub fn scenario(name: &str) -> ScenarioConfig {
    load_config(&corpus_dir().join(format!("{name}.toml"))).unwrap()
}

pub fn parse(lines: &[String]) -> Vec<Value> {
    lines.iter().map(|l| serde_json::from_str(l).expect("trace line is JSON")).collect()
}

/// Trace events of one kind, in order.
pub fn events<'a>(trace: &'a [Value], kind: &str) -> Vec<&'a Value> {
    trace.iter().filter(|v| v["record"] == "event" && v["kind"] == kind).collect()
}

/// Calculated results of one design.
pub fn results(trace: &[Value], design: u64) -> Vec<&Value> {
    events(trace, "ResultCalculated").into_iter().filter(|v| v["design"] == design).collect()
}

pub fn settlement<'a>(result: &'a Value, player: &str) -> Option<&'a Value> {
    result["settlements"].as_array()?.iter().find(|s| s["player"] == player)
}
