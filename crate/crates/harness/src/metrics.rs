use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Column order of every metrics CSV.
pub const COLUMNS: [&str; 8] = [
    "setting",
    "mode",
    "target_rtf",
    "run",
    "sin_theta",
    "variance",
    "realized_rtf",
    "episode_hash",
];

/// One CSV row. `variance` is the setting's variance repeated on each of
/// its rows; fields that do not apply to an experiment are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub setting: String,
    pub mode: String,
    pub target_rtf: f64,
    pub run: u32,
    pub sin_theta: Option<f64>,
    pub variance: Option<f64>,
    pub realized_rtf: f64,
    pub episode_hash: Option<String>,
}

/// Writes rows as they are produced so an aborted sweep leaves a valid,
/// partial file behind.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let error = |e: &dyn std::fmt::Display| HarnessError::Output {
            path: path.to_path_buf(),
            error: e.to_string(),
        };
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| error(&e))?;
        writer.write_record(COLUMNS).map_err(|e| error(&e))?;
        writer.flush().map_err(|e| error(&e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn write(&mut self, records: &[MetricsRecord]) -> Result<(), HarnessError> {
        let path = &self.path;
        let error = |e: &dyn std::fmt::Display| HarnessError::Output {
            path: path.clone(),
            error: e.to_string(),
        };
        for r in records {
            self.writer.serialize(r).map_err(|e| error(&e))?;
        }
        self.writer.flush().map_err(|e| error(&e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Population variance, computed on values shifted by the first sample so
/// identical samples give exactly zero.
pub fn variance(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else {
        return 0.0;
    };
    let n = values.len() as f64;
    let (sum, sum_sq) = values
        .iter()
        .map(|v| v - first)
        .fold((0.0, 0.0), |(s, q), d| (s + d, q + d * d));
    ((sum_sq - sum * sum / n) / n).max(0.0)
}
