//! File helpers shared by the subcommands.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rankid::{Error, Result};
use serde::Serialize;

/// Seconds since the Unix epoch; the only non-reproducible field in outputs.
pub fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
