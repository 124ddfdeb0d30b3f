use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tallscore::samplers::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
    LambdaViolation,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::LambdaViolation => "lambda_violation",
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub task: String,
    pub method: String,
    pub clip: bool,
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub eta: Option<f64>,
    pub seed: u64,
    pub status: RunStatus,
    /// Absent when fewer than two draws survived.
    pub sw: Option<f64>,
    pub mmd: Option<f64>,
    pub n_proj: usize,
    pub proj_seed: u64,
    pub nfe: u64,
    pub setup_nfe: u64,
    pub jacobian_evals: u64,
    pub flagged_steps: usize,
    pub lambda_violations: usize,
    pub diverged_chains: usize,
    pub dropped_rows: usize,
    pub n_draws: usize,
    pub wall_time_s: f64,
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (a.task.as_str(), a.method.as_str(), a.m, a.n)
            .cmp(&(b.task.as_str(), b.method.as_str(), b.m, b.n))
            .then(a.eps.total_cmp(&b.eps))
            .then((a.steps, a.seed).cmp(&(b.steps, b.seed)))
    });
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub fn meta_path(root: &Path, run_id: &str) -> PathBuf {
    root.join("meta").join(format!("{run_id}.json"))
}

pub fn write_meta(root: &Path, record: &RunRecord) -> Result<()> {
    let json = serde_json::to_vec_pretty(record)?;
    write_atomic(&meta_path(root, &record.run_id), &json)
}

pub fn read_meta(path: &Path) -> Result<RunRecord> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(RECORD_COLUMNS)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub const RECORD_COLUMNS: &[&str] = &[
    "run_id",
    "config_hash",
    "task",
    "method",
    "clip",
    "m",
    "n",
    "eps",
    "T",
    "eta",
    "seed",
    "status",
    "sw",
    "mmd",
    "n_proj",
    "proj_seed",
    "nfe",
    "setup_nfe",
    "jacobian_evals",
    "flagged_steps",
    "lambda_violations",
    "diverged_chains",
    "dropped_rows",
    "n_draws",
    "wall_time_s",
];

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_atomic(path, &records_to_csv(records)?)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row.with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(out)
}

pub fn rows_to_csv(rows: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut line = Vec::with_capacity(rows.ncols());
    for row in rows.row_iter() {
        line.clear();
        line.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&line)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn read_rows(path: &Path, m: usize) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        anyhow::ensure!(rec.len() == m, "{}: expected {m} columns, got {}", path.display(), rec.len());
        for v in rec.iter() {
            values.push(v.parse::<f64>()?);
        }
    }
    Ok(DMatrix::from_row_slice(values.len() / m, m, &values))
}

/// Draws as CSV plus a JSON sidecar with the sampler metadata.
pub fn write_sample_set(dir: &Path, stem: &str, set: &SampleSet) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.csv")), &rows_to_csv(&set.draws)?)?;
    write_atomic(&dir.join(format!("{stem}.json")), &serde_json::to_vec_pretty(&set.meta)?)
}
