//! Flat `key = value` config files. Keys are long flag names; flags given on
//! the command line win over the file.

use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::error::{CliError, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim();
        if key.is_empty() || key.starts_with('-') {
            return Err(CliError::usage(format!("config line {}: bad key {key:?}", i + 1)));
        }
        let value = v.trim().trim_matches('"');
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Result<Option<(usize, usize, String)>> {
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            let v = argv
                .get(i + 1)
                .ok_or_else(|| CliError::usage("--config needs a path"))?;
            return Ok(Some((i, 2, v.clone())));
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Ok(Some((i, 1, v.to_string())));
        }
    }
    Ok(None)
}

/// Removes `--config FILE` and appends every file entry the command line does not set.
pub fn resolve_argv(mut argv: Vec<String>) -> Result<Vec<String>> {
    let Some((at, len, path)) = config_path(&argv)? else {
        return Ok(argv);
    };
    argv.drain(at..at + len);
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::input(format!("{path}: {e}")))?;
    let cmd = Cli::command();
    let sub = argv
        .iter()
        .find_map(|a| cmd.find_subcommand(a))
        .cloned();
    for (key, value) in parse(&text)? {
        if key == "config" {
            return Err(CliError::usage("config files cannot include other config files"));
        }
        let flag = format!("--{key}");
        if argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let arg = sub
            .iter()
            .flat_map(|s| s.get_arguments())
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()));
        let is_switch = arg.is_some_and(|a| !a.get_action().takes_values());
        if is_switch {
            match value.as_str() {
                "true" => argv.push(flag),
                "false" => {}
                other => {
                    return Err(CliError::usage(format!("{key} is a switch; got {other:?}")))
                }
            }
        } else {
            // Unknown keys fall through to the parser, which rejects them.
            argv.push(flag);
            argv.push(value);
        }
    }
    Ok(argv)
}
