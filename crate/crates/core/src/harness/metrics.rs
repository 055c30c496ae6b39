use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "split",
    "task_loss",
    "align_loss",
    "jac_loss",
    "accuracy",
    "solver_steps_mean",
    "solver_steps_max",
    "seconds_per_sample",
];

/// One line of the metrics log. Training rows carry no accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub task_loss: f64,
    pub align_loss: f64,
    pub jac_loss: f64,
    pub accuracy: Option<f64>,
    pub solver_steps_mean: f64,
    pub solver_steps_max: usize,
    pub seconds_per_sample: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Append-only CSV log with a fixed header.
pub struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsLog {
    /// Creates the file, replacing any previous log.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            writer,
        })
    }

    /// Reopens an existing log for appending.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(MetricsLog {
            path: path.to_path_buf(),
            writer,
        })
    }

    /// Writes and flushes one row, so a crash loses nothing already logged.
    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected metrics header {header:?}"),
        });
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Index of the smallest loss, earliest on ties.
pub fn select_model(losses: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| l < b) {
            best = Some((i, l));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::contract("no validation losses to select from"))
}

/// Epoch of the validation row with the lowest task loss.
pub fn select_epoch(rows: &[MetricsRow]) -> Result<usize> {
    let valid: Vec<&MetricsRow> = rows.iter().filter(|r| r.split == "valid").collect();
    let losses: Vec<f64> = valid.iter().map(|r| r.task_loss).collect();
    Ok(valid[select_model(&losses)?].epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_and_ties() {
        assert_eq!(select_model(&[0.5, 0.2, 0.3]).unwrap(), 1);
        assert_eq!(select_model(&[0.2, 0.2]).unwrap(), 0);
        assert!(select_model(&[]).is_err());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow {
                epoch: 0,
                split: "train".into(),
                task_loss: 1.25,
                align_loss: 0.0,
                jac_loss: 0.0,
                accuracy: None,
                solver_steps_mean: 7.5,
                solver_steps_max: 12,
                seconds_per_sample: 0.0,
            },
            MetricsRow {
                epoch: 0,
                split: "valid".into(),
                task_loss: 0.1 + 0.2,
                align_loss: 0.0,
                jac_loss: 0.0,
                accuracy: Some(0.875),
                solver_steps_mean: 6.0,
                solver_steps_max: 9,
                seconds_per_sample: 0.0,
            },
        ];
        let mut log = MetricsLog::create(&path).unwrap();
        rows.iter().for_each(|r| log.push(r).unwrap());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&METRICS_HEADER.join(",")));
        assert_eq!(read_metrics(&path).unwrap(), rows);
        assert_eq!(select_epoch(&rows).unwrap(), 0);
    }
}
