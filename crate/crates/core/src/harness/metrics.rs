//! `metrics.csv` writing and reading, plus plotting series export.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::trainer::MetricsRecord;
use crate::{Error, Result};

pub const METRICS_HEADER: [&str; 12] = [
    "iteration",
    "epoch",
    "current_lr",
    "mean_sample_loss",
    "theta_sum",
    "theta_min",
    "theta_max",
    "expected_active_count",
    "test_error_det",
    "test_error_stoch",
    "skipped_steps",
    "wall_time_s",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        what: "metrics",
        message: e.to_string(),
    }
}

/// Append-only metrics file, flushed after every row.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Creates `path`, or appends to it when `append` is set and it already
    /// has a header.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let existing = append && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let file = if existing {
            OpenOptions::new().append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        if !existing {
            inner.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
            inner.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        let row = [
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.current_lr.to_string(),
            opt(r.mean_sample_loss),
            opt(r.theta_sum),
            opt(r.theta_min),
            opt(r.theta_max),
            opt(r.expected_active_count),
            opt(r.test_error_det),
            opt(r.test_error_stoch),
            r.skipped_steps.to_string(),
            r.wall_time_s.to_string(),
        ];
        self.inner.write_record(&row).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn field<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = row.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        what: "metrics",
        message: format!("column `{}` has bad value {raw:?}", METRICS_HEADER[i]),
    })
}

fn opt_field(path: &Path, row: &csv::StringRecord, i: usize) -> Result<Option<f64>> {
    if row.get(i).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(path, row, i).map(Some)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => csv_err(path, e),
        })?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            what: "metrics header",
            message: format!("expected {}", METRICS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        out.push(MetricsRecord {
            iteration: field(path, &row, 0)?,
            epoch: field(path, &row, 1)?,
            current_lr: field(path, &row, 2)?,
            mean_sample_loss: opt_field(path, &row, 3)?,
            theta_sum: opt_field(path, &row, 4)?,
            theta_min: opt_field(path, &row, 5)?,
            theta_max: opt_field(path, &row, 6)?,
            expected_active_count: opt_field(path, &row, 7)?,
            test_error_det: opt_field(path, &row, 8)?,
            test_error_stoch: opt_field(path, &row, 9)?,
            skipped_steps: field(path, &row, 10)?,
            wall_time_s: field(path, &row, 11)?,
        });
    }
    Ok(out)
}

pub const THETA_SERIES_HEADER: &str = "iteration\tepoch\ttheta_sum\texpected_active_count";
pub const ERROR_SERIES_HEADER: &str = "iteration\tepoch\ttest_error_det\ttest_error_stoch";

fn write_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::with_capacity(64 * (lines.len() + 1));
    body.push_str(header);
    body.push('\n');
    for l in lines {
        body.push_str(l);
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `theta_sum.tsv` (rows with θ) and `test_error.tsv` (rows with an
/// evaluation) into `out_dir`; returns their paths.
pub fn export_history(metrics_path: &Path, out_dir: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let records = read_metrics(metrics_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let theta: Vec<String> = records
        .iter()
        .filter_map(|r| {
            let sum = r.theta_sum?;
            Some(format!(
                "{}\t{}\t{}\t{}",
                r.iteration,
                r.epoch,
                sum,
                opt(r.expected_active_count)
            ))
        })
        .collect();
    let errors: Vec<String> = records
        .iter()
        .filter_map(|r| {
            let det = r.test_error_det?;
            Some(format!("{}\t{}\t{}\t{}", r.iteration, r.epoch, det, opt(r.test_error_stoch)))
        })
        .collect();
    let theta_path = out_dir.join("theta_sum.tsv");
    let error_path = out_dir.join("test_error.tsv");
    write_lines(&theta_path, THETA_SERIES_HEADER, &theta)?;
    write_lines(&error_path, ERROR_SERIES_HEADER, &errors)?;
    Ok((theta_path, error_path))
}

/// Reads a series file back as `(header columns, rows)`.
pub fn read_series(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            what: "series header",
            message: "file is empty".into(),
        })?
        .split('\t')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split('\t')
            .map(|v| if v.is_empty() { Ok(f64::NAN) } else { v.parse::<f64>() })
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                what: "series row",
                message: format!("line {}: {e}", i + 2),
            })?;
        if row.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                what: "series row",
                message: format!("line {} has {} columns, header has {}", i + 2, row.len(), header.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}
