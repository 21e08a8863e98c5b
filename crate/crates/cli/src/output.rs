//! Result files. Everything that varies between identical runs (wall-clock
//! time, thread count) lives under `metadata`, so the rest of the file is
//! byte-identical for the same config and seed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use kmshrink::experiments::{Aggregate, KpcaSummary, SCHEMA_VERSION};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub timestamp: u64,
    pub version: &'static str,
    pub parallelism: usize,
    /// Total wall-clock seconds.
    pub elapsed: f64,
    /// Per-trial wall-clock seconds, when the command has trials.
    pub timings: Vec<f64>,
}

impl Metadata {
    pub fn new(parallelism: usize, elapsed: f64, timings: Vec<f64>) -> Self {
        Self {
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION"),
            parallelism,
            elapsed,
            timings,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub metadata: Metadata,
    pub effective_config: &'a C,
    pub report: &'a R,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `<dir>/<command>.json` and returns its path.
pub fn write_json<C: Serialize, R: Serialize>(
    dir: &Path,
    command: &str,
    metadata: Metadata,
    config: &C,
    report: &R,
) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{command}.json"));
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        metadata,
        effective_config: config,
        report,
    };
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn csv_writer(dir: &Path, name: &str) -> Result<(PathBuf, csv::Writer<std::fs::File>), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path)?;
    Ok((path, w))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(dir: &Path, command: &str, rows: &[Aggregate]) -> Result<PathBuf, CliError> {
    let (path, mut w) = csv_writer(dir, &format!("{command}.csv"))?;
    w.write_record([
        "schema_version", "kernel", "estimator", "n", "d", "multiplier", "count", "mean", "median", "p25", "p75",
        "win_rate", "paired",
    ])?;
    for a in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            a.kernel.clone(),
            a.estimator.to_string(),
            a.n.to_string(),
            a.d.to_string(),
            opt(a.multiplier),
            a.count.to_string(),
            a.mean.to_string(),
            a.median.to_string(),
            a.p25.to_string(),
            a.p75.to_string(),
            opt(a.win_rate),
            a.paired.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

pub fn write_kpca_csv(dir: &Path, rows: &[KpcaSummary]) -> Result<PathBuf, CliError> {
    let (path, mut w) = csv_writer(dir, "kpca-bench.csv")?;
    w.write_record(["schema_version", "scenario", "count", "mean", "std_dev"])?;
    for s in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            s.scenario.name().to_string(),
            s.count.to_string(),
            s.mean.to_string(),
            s.std_dev.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// One row per evaluated shrinkage value; `naive` may be empty.
pub fn write_profile_csv(dir: &Path, lambdas: &[f64], scores: &[f64], naive: &[f64]) -> Result<PathBuf, CliError> {
    let (path, mut w) = csv_writer(dir, "loocv-profile.csv")?;
    w.write_record(["schema_version", "lambda", "score", "naive_score"])?;
    for (i, (l, s)) in lambdas.iter().zip(scores).enumerate() {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            l.to_string(),
            s.to_string(),
            opt(naive.get(i).copied()),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Square matrix with group names as the first column and header.
pub fn write_gram_csv(dir: &Path, names: &[String], m: &nalgebra::DMatrix<f64>) -> Result<PathBuf, CliError> {
    let (path, mut w) = csv_writer(dir, "dist-gram.csv")?;
    let mut header = vec![String::from("group")];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}
