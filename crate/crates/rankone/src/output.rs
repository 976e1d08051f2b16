//! CSV emission and re-parsing of sweep results.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::harness::{Aggregate, SweepResult, TrialRecord};

pub const RECORD_HEADER: [&str; 13] = [
    "estimator",
    "M",
    "K",
    "B",
    "L",
    "P",
    "snr_db",
    "trial",
    "nmse",
    "aoa_rmse",
    "runtime_ns",
    "seed",
    "failed",
];

pub const AGGREGATE_HEADER: [&str; 14] = [
    "estimator",
    "M",
    "K",
    "B",
    "L",
    "P",
    "snr_db",
    "trials",
    "failures",
    "nmse_mean_db",
    "nmse_median_db",
    "nmse_p10_db",
    "nmse_p90_db",
    "runtime_median_ns",
];

/// Path of the aggregates file that accompanies a records file:
/// `dir/name.csv` becomes `dir/name_aggregates.csv`.
pub fn aggregates_path(records_path: &Path) -> PathBuf {
    let stem = records_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    records_path.with_file_name(format!("{stem}_aggregates.csv"))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write one row per record to `path` and the per-point aggregates beside it.
/// Floats use the shortest representation that parses back to the same value.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e| CliError::csv(path, e);
    w.write_record(RECORD_HEADER).map_err(err)?;
    for r in &result.records {
        w.write_record([
            r.estimator.to_string(),
            r.antennas.to_string(),
            r.users.to_string(),
            r.pilot_len.to_string(),
            r.stack_len.to_string(),
            r.paths.to_string(),
            r.snr_db.to_string(),
            r.trial.to_string(),
            r.nmse.to_string(),
            opt(r.aoa_rmse),
            opt(r.runtime_ns),
            r.seed.to_string(),
            r.failed.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;

    let agg_path = aggregates_path(path);
    let mut w = writer(&agg_path)?;
    let err = |e| CliError::csv(&agg_path, e);
    w.write_record(AGGREGATE_HEADER).map_err(err)?;
    for a in &result.aggregates {
        w.write_record([
            a.estimator.to_string(),
            a.antennas.to_string(),
            a.users.to_string(),
            a.pilot_len.to_string(),
            a.stack_len.to_string(),
            a.paths.to_string(),
            a.snr_db.to_string(),
            a.trials.to_string(),
            a.failures.to_string(),
            a.nmse_mean_db.to_string(),
            a.nmse_median_db.to_string(),
            a.nmse_p10_db.to_string(),
            a.nmse_p90_db.to_string(),
            opt(a.runtime_median_ns),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&agg_path, e))?;
    Ok(())
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::csv(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    read(path)
}

pub fn read_aggregates(path: &Path) -> Result<Vec<Aggregate>> {
    read(path)
}
