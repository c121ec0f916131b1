//! The `edeblur` command-line pipeline.
//!
//! Every command writes a `run.json` next to its outputs holding the resolved
//! argument vector, so `edeblur replay run.json` repeats the run exactly.

pub mod args;
mod commands;
pub mod config;
pub mod error;
mod io;

use std::path::Path;

use clap::Parser;
use serde::{Deserialize, Serialize};

use args::{Cli, Command};
pub use error::{CliError, Result};

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    /// Argument vector after config-file merging, without the program name.
    pub argv: Vec<String>,
    /// Every option of the command with defaults filled in.
    pub resolved: serde_json::Value,
}

/// Parses and executes one invocation. `argv` excludes the program name.
pub fn run<I, S>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv = config::resolve_argv(argv.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(std::iter::once("edeblur".to_string()).chain(argv.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::usage(e.render().to_string()));
        }
    };
    if let Command::Replay(r) = &cli.command {
        let text = std::fs::read_to_string(&r.run)
            .map_err(|e| CliError::input(format!("{}: {e}", r.run.display())))?;
        let rec: RunRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: {e}", r.run.display())))?;
        if rec.argv.first().map(String::as_str) == Some("replay") {
            return Err(CliError::usage("a replay record cannot replay itself"));
        }
        return run(rec.argv);
    }
    let record = RunRecord {
        tool: "edeblur".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        argv,
        resolved: serde_json::to_value(&cli).expect("arguments serialize"),
    };
    commands::dispatch(&cli, &record)
}

pub(crate) fn write_run_record(dir: &Path, record: &RunRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record).expect("record serializes") + "\n";
    io::write_text(&dir.join("run.json"), &text)
}
