pub mod eval;
pub mod gradcheck;
pub mod report;
pub mod split;
pub mod synth;
pub mod train;

use std::io::Write;
use std::path::Path;

use fusenet::{Error, Result};

pub(crate) fn say(stdout: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(stdout, "{line}").and_then(|_| stdout.flush()).map_err(|e| Error::io("<stdout>", e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}
