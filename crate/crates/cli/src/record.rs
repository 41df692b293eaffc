//! Output paths, atomic JSON writes and the per-run reproducibility record.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use spectropol::dataio::write_atomic;
use spectropol::Error;

use crate::Global;

pub fn require_out(g: &Global) -> Result<PathBuf> {
    g.out
        .clone()
        .ok_or_else(|| Error::InvalidInput("--out is required for this command".into()).into())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidInput(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::InvalidInput(format!("{what} {} is not a directory", path.display())).into());
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// `<dir>/run.json` for directory outputs, `<file>.run.json` otherwise.
pub fn record_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        out.with_file_name(name)
    }
}

#[derive(Serialize)]
struct Record<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    argv: Vec<String>,
    global: &'a Global,
    config: &'a C,
}

/// Writes the resolved configuration of a finished run next to its output.
pub fn write_record(out: &Path, command: &str, g: &Global, config: &impl Serialize) -> Result<()> {
    let rec = Record {
        command,
        version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        global: g,
        config,
    };
    write_json(&record_path(out), &rec)
}

pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("`{t}` is not a number")).into())
        })
        .collect()
}
