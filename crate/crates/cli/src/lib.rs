//! Command implementations behind the `fusenet` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, file or
//! checkpoint error, 3 numeric failure (non-finite training loss or a failed
//! gradient check).

pub mod args;
pub mod commands;
pub mod config;

use std::io::Write;

use fusenet::{Error, ErrorCategory, Result};

pub use args::Cli;
pub use config::RunConfig;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Usage => EXIT_USAGE,
        ErrorCategory::Data => EXIT_DATA,
        ErrorCategory::Numeric => EXIT_NUMERIC,
    }
}

/// Runs one parsed command, writing its report to `stdout`. Returns the
/// process exit code for outcomes that are not errors.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<u8> {
    use args::Command;
    match cli.command {
        Command::Split(a) => commands::split::run(&a, stdout).map(|_| 0),
        Command::Train(a) => commands::train::run(&a, stdout).map(|_| 0),
        Command::Eval(a) => commands::eval::run(&a, stdout).map(|_| 0),
        Command::Report(a) => commands::report::run(&a, stdout).map(|_| 0),
        Command::Gradcheck(a) => commands::gradcheck::run(&a, stdout).map(|ok| if ok { 0 } else { EXIT_NUMERIC }),
        Command::Synth(a) => commands::synth::run(&a, stdout).map(|_| 0),
    }
}
