//! Command-line driver: `posediff <command> [--config file] [--key.path value ...]`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use thiserror::Error;

pub const COMMANDS: [&str; 7] = ["gen-data", "train", "sample", "fit", "complete", "denoise", "eval"];

pub const USAGE: &str = "usage: posediff <gen-data|train|sample|fit|complete|denoise|eval> \
[--config FILE] [--key.path VALUE ...]";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] posediff::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: String,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

/// Command-specific short flags and the configuration keys they set.
fn alias(command: &str, flag: &str) -> Option<&'static str> {
    Some(match (command, flag) {
        ("sample", "n") => "sampling.count",
        ("sample", "caption") => "sampling.caption",
        ("sample", "scale") => "sampling.guidance_scale",
        ("fit" | "complete" | "denoise", "n") => "tasks.count",
        ("fit", "method") => "tasks.fit_method",
        ("complete", "scenario") => "tasks.scenario",
        ("eval", "metric") => "eval.metric",
        ("eval", "a") => "eval.a",
        ("eval", "b") => "eval.b",
        (_, "obj") => "dump_obj",
        _ => return None,
    })
}

pub fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let (command, rest) = args.split_first().ok_or_else(|| CliError::Usage(USAGE.into()))?;
    if !COMMANDS.contains(&command.as_str()) {
        return Err(CliError::Usage(format!("unknown command {command:?}\n{USAGE}")));
    }
    let mut inv = Invocation { command: command.clone(), config: None, overrides: Vec::new() };
    let mut i = 0;
    while i < rest.len() {
        let flag = rest[i]
            .strip_prefix("--")
            .filter(|f| !f.is_empty())
            .ok_or_else(|| CliError::Usage(format!("unexpected argument {:?}\n{USAGE}", rest[i])))?;
        // A flag directly followed by another flag (or nothing) is boolean.
        let value = match rest.get(i + 1) {
            Some(v) if !v.starts_with("--") => {
                i += 2;
                v.clone()
            }
            _ => {
                i += 1;
                "true".to_string()
            }
        };
        if flag == "config" {
            inv.config = Some(PathBuf::from(value));
        } else {
            let key = alias(command, flag).map(str::to_string).unwrap_or_else(|| flag.to_string());
            inv.overrides.push((key, value));
        }
    }
    Ok(inv)
}

/// Runs a command line and returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let result = parse_args(args).and_then(|inv| {
        let config = config::resolve(inv.config.as_deref(), &inv.overrides)?;
        commands::execute(&inv.command, &config)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parses_aliases_and_paths() {
        let inv = parse_args(&args("sample --n 16 --seed 7 --model.blocks 2 --obj")).unwrap();
        assert_eq!(inv.command, "sample");
        let expect: Vec<(String, String)> =
            [("sampling.count", "16"), ("seed", "7"), ("model.blocks", "2"), ("dump_obj", "true")]
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect();
        assert_eq!(inv.overrides, expect);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(parse_args(&args("explode")).unwrap_err().exit_code(), 2);
        assert_eq!(parse_args(&args("train stray")).unwrap_err().exit_code(), 2);
        assert_eq!(parse_args(&[]).unwrap_err().exit_code(), 2);
    }
}
