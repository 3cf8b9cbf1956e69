//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

/// A configuration small enough that every command finishes in seconds.
pub fn tiny_config(dir: &Path) -> Value {
    json!({
        "seed": 3,
        "model": { "latent_dim": 16, "blocks": 1, "heads": 2, "mlp_hidden": 16 },
        "training": { "steps": 4, "batch_size": 4 },
        "data": { "size": 32 },
        "sampling": { "count": 3, "steps": 5 },
        "refine": { "t": 10, "stride": 5 },
        "fit": { "iterations": 3 },
        "complete": { "from": 90, "to": 10, "steps": 8 },
        "tasks": { "count": 2 },
        "paths": {
            "corpus": dir.join("corpus.pdps"),
            "checkpoint": dir.join("model.pdck"),
            "output": dir,
        }
    })
}

pub fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

pub fn posediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posediff")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

/// Runs one command against a config file; panics with stderr on failure.
pub fn run_ok(command: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = posediff(&args);
    assert!(out.status.success(), "{command} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Every file below `dir` (except the config itself) with its bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "config.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub const PIPELINE: [&str; 6] = ["gen-data", "train", "sample", "fit", "complete", "denoise"];

/// Runs the whole pipeline plus an evaluation in `dir`.
pub fn run_pipeline(dir: &Path) {
    let config = write_config(dir, &tiny_config(dir));
    for c in PIPELINE {
        run_ok(c, &config, &[]);
    }
    run_ok("fit", &config, &["--method", "smplify", "--paths.output", dir.join("smplify").to_str().unwrap()]);
    let samples = dir.join("samples.pdps");
    run_ok(
        "eval",
        &config,
        &["--metric", "fid", "--a", samples.to_str().unwrap(), "--b", dir.join("corpus.pdps").to_str().unwrap()],
    );
}
