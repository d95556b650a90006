use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{G5Error, Result};

pub const METRICS_HEADER: [&str; 7] = ["run", "graph", "task", "epoch", "split", "metric", "value"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run: String,
    pub graph: String,
    pub task: String,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(
        run: &str,
        graph: &str,
        task: &str,
        epoch: usize,
        split: &str,
        metric: &str,
        value: f64,
    ) -> Self {
        MetricRecord {
            run: run.into(),
            graph: graph.into(),
            task: task.into(),
            epoch,
            split: split.into(),
            metric: metric.into(),
            value,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> G5Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => G5Error::io(path, io),
        other => G5Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

/// Append rows to a metrics CSV, writing the header when the file is new.
pub fn export_metrics(records: &[MetricRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| G5Error::io(dir, e))?;
        }
    }
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| G5Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| G5Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let missing: Vec<&str> = METRICS_HEADER
        .iter()
        .copied()
        .filter(|h| !headers.iter().any(|x| x == *h))
        .collect();
    if !missing.is_empty() {
        return Err(G5Error::Schema(format!(
            "{}: missing columns {}",
            path.display(),
            missing.join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}
