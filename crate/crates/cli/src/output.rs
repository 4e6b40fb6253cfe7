//! The single writer: CSV, side files and the run manifest. Nothing is
//! written until the whole run has succeeded, and every file goes through a
//! temporary sibling and a rename, so a failed run leaves no partial output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde_json::json;

use crate::commands::Report;
use crate::settings::Settings;

pub fn csv_bytes(report: &Report) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&report.table.header)?;
    for row in &report.table.rows {
        w.write_record(row)?;
    }
    w.into_inner().context("flushing CSV")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

/// `results.csv` → `results.manifest.json`.
pub fn default_manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn emit(command: &str, settings: &Settings, report: &Report, wall: Duration) -> Result<()> {
    let csv = csv_bytes(report)?;
    for (path, text) in &report.side_files {
        write_atomic(path, text.as_bytes())?;
    }
    match &settings.out {
        Some(out) => write_atomic(out, &csv)?,
        None => std::io::stdout().lock().write_all(&csv)?,
    }
    let manifest_path = settings
        .manifest
        .clone()
        .or_else(|| settings.out.as_deref().map(default_manifest_path));
    if let Some(path) = manifest_path {
        let manifest = json!({
            "command": command,
            "seed": settings.seed(),
            "budgets": report.budgets,
            "engine_versions": {
                "twirlcorr": twirlcorr::VERSION,
                "twirlcorr-cli": env!("CARGO_PKG_VERSION"),
            },
            "wall_time_seconds": wall.as_secs_f64(),
            "threads": rayon::current_num_threads(),
            "rows": report.table.rows.len(),
            "csv": settings.out,
            "settings": settings,
        });
        write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    }
    Ok(())
}
