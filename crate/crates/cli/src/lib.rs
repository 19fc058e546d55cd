//! Command-line front end. [`run_cli`] is the whole program; `main` only sets
//! up logging and forwards the exit code.

mod args;
mod commands;

use std::fmt;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(hids_core::Error),
    Io(PathBuf, std::io::Error),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if !e.is_data_error() => EXIT_USAGE,
            CliError::Core(_) | CliError::Io(..) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<hids_core::Error> for CliError {
    fn from(e: hids_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// Parses `argv` (including the program name) and runs one subcommand.
/// Results go to `stdout`, diagnostics to `stderr`; returns the exit code.
pub fn run_cli<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match with_config(&argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => return usage_error(e, &argv, stdout, stderr),
    };
    let result = panic::catch_unwind(AssertUnwindSafe(|| commands::dispatch(cli, stdout)));
    match result {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            let _ = writeln!(stderr, "internal error: {msg}");
            EXIT_INTERNAL
        }
    }
}

fn with_config(argv: &[String]) -> Result<Vec<String>, CliError> {
    let Some(path) = args::config_path(argv) else {
        return Ok(argv.to_vec());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    args::merge_config(argv, &value)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn usage_error(
    e: clap::Error,
    argv: &[String],
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        let _ = write!(stdout, "{}", e.render());
        return EXIT_OK;
    }
    let _ = write!(stderr, "{}", e.render());
    let mut cmd = Cli::command();
    cmd.build();
    let sub = argv
        .iter()
        .skip(1)
        .find(|a| args::SUBCOMMANDS.contains(&a.as_str()))
        .and_then(|name| cmd.find_subcommand_mut(name).map(|c| c.render_help()));
    let help = sub.unwrap_or_else(|| cmd.render_help());
    let _ = write!(stderr, "\n{help}");
    EXIT_USAGE
}
