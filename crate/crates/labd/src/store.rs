//! Run payloads, trace export and scenario bundles on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use maglab_core::calibrate::ScenarioBundle;
use maglab_core::virtlab::{write_trace_csv, FitResult, RunRecord, TRACE_HEADER};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runlog::{read_entries, RunLogError};

pub const RUN_LOG_FILE: &str = "runlog.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(u64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("payload: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace csv header {0:?} is not {TRACE_HEADER:?}")]
    Header(String),
    #[error(transparent)]
    Log(#[from] RunLogError),
}

/// What the service keeps for each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRun {
    pub run_id: u64,
    pub record: RunRecord,
    pub fit: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

pub fn run_log_path(output_dir: &Path) -> PathBuf {
    output_dir.join(RUN_LOG_FILE)
}

pub fn payload_rel(run_id: u64) -> String {
    format!("records/{run_id:06}.json")
}

pub fn write_payload(output_dir: &Path, run: &StoredRun) -> Result<String, StoreError> {
    let rel = payload_rel(run.run_id);
    let path = output_dir.join(&rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer(&mut w, run)?;
    w.flush()?;
    Ok(rel)
}

/// Looks a run up through the run log.
pub fn load_run(output_dir: &Path, run_id: u64) -> Result<StoredRun, StoreError> {
    let entry = read_entries(&run_log_path(output_dir))?
        .into_iter()
        .find(|e| e.seq == run_id)
        .ok_or(StoreError::NotFound(run_id))?;
    let rel = entry.payload_path.ok_or(StoreError::NotFound(run_id))?;
    let text = std::fs::read_to_string(output_dir.join(rel))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_trace(record: &RunRecord, path: &Path) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_trace_csv(record, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn export_csv(output_dir: &Path, run_id: u64, out: &Path) -> Result<StoredRun, StoreError> {
    let run = load_run(output_dir, run_id)?;
    write_trace(&run.record, out)?;
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TraceRow {
    pub sweep_value: f64,
    pub counts: u64,
    pub shots: u64,
    pub p_blockade: f64,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, StoreError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != TRACE_HEADER {
        return Err(StoreError::Header(header));
    }
    Ok(r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?)
}

/// Writes `map.csv`, `fits.csv` and `verdict.txt` under
/// `<output_dir>/<scenario>/<timestamp>/`.
pub fn write_bundle(output_dir: &Path, bundle: &ScenarioBundle, timestamp: &str) -> Result<PathBuf, StoreError> {
    let base = output_dir.join(&bundle.scenario);
    let mut dir = base.join(timestamp);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{timestamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("map.csv"), &bundle.map_csv)?;
    std::fs::write(dir.join("fits.csv"), &bundle.fits_csv)?;
    std::fs::write(dir.join("verdict.txt"), &bundle.verdict)?;
    Ok(dir)
}
