//! Command-line front end: `resicomp encode|decode|trace|simulate|sweep|modes|fit-prior`.
//!
//! Exit status: 0 ok, 1 usage, 2 validation, 3 I/O.

pub mod commands;
pub mod config;
pub mod error;
pub mod session_file;
pub mod sweep;

use std::ffi::OsString;
use std::io::Write;
use std::sync::OnceLock;

use clap::error::ErrorKind;
use clap::Parser;
use resicomp::predictor::PriorModel;
use resicomp::token_codec::CodecConfig;

use crate::commands::{dispatch, Cli};
use crate::error::{CliError, CliResult};

/// Environment variable naming a predictor model file.
pub const MODEL_ENV: &str = "RESICOMP_MODEL";

/// Prior from `$RESICOMP_MODEL` if set, else the built-in corpus prior for
/// `codec`.
pub fn load_prior(codec: &CodecConfig) -> CliResult<PriorModel> {
    match std::env::var_os(MODEL_ENV) {
        Some(path) if !path.is_empty() => PriorModel::load(&path)
            .map_err(|e| CliError::Io(format!("{MODEL_ENV}={}: {e}", path.to_string_lossy()))),
        _ if *codec == CodecConfig::default() => {
            static DEFAULT: OnceLock<PriorModel> = OnceLock::new();
            Ok(DEFAULT.get_or_init(|| PriorModel::builtin(codec)).clone())
        }
        _ => {
            codec.validate()?;
            Ok(PriorModel::builtin(codec))
        }
    }
}

/// Runs the CLI, writing normal output to `out` and diagnostics to `err`.
/// Returns the exit status.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "resicomp: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
