//! CSV and run-manifest formats.
//!
//! Spike trains use 17 significant digits; everything else uses the
//! shortest decimal that round-trips.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::belief::GaussianBelief;
use crate::dynamics::StatePath;
use crate::linalg::SymMatrix;
use crate::spikes::{Spike, SpikeTrain};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Scientific notation with 17 significant digits.
pub fn fmt_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header plus rows of numbers, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), IoError> {
        write_rows(
            out,
            &self.header,
            self.rows.iter().map(|r| r.iter().map(|&v| fmt_num(v)).collect()),
        )
    }

    pub fn write_file(&self, path: &Path) -> Result<(), IoError> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, IoError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            rows.push(parse_row(&rec?, i + 1)?);
        }
        Ok(Table { header, rows })
    }
}

fn write_rows<W: Write>(out: W, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_row(rec: &csv::StringRecord, row: usize) -> Result<Vec<f64>, IoError> {
    rec.iter()
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| IoError::Row {
                row,
                message: format!("{s:?}: {e}"),
            })
        })
        .collect()
}

fn check_header(found: &csv::StringRecord, expected: &[String]) -> Result<(), IoError> {
    let found: Vec<String> = found.iter().map(str::to_string).collect();
    if found != expected {
        return Err(IoError::Header {
            expected: expected.to_vec(),
            found,
        });
    }
    Ok(())
}

pub fn spike_header(mark_dim: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=mark_dim).map(|i| format!("theta_{i}")))
        .collect()
}

pub fn write_spikes<W: Write>(out: W, train: &SpikeTrain) -> Result<(), IoError> {
    let rows = train.events().iter().map(|s| {
        std::iter::once(fmt_sig17(s.time))
            .chain(s.mark.iter().map(|&v| fmt_sig17(v)))
            .collect()
    });
    write_rows(out, &spike_header(train.mark_dim()), rows)
}

/// The CSV does not carry the horizon, so the caller supplies it.
pub fn read_spikes<R: Read>(input: R, horizon: f64) -> Result<SpikeTrain, IoError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let mark_dim = header.len().saturating_sub(1);
    check_header(&header, &spike_header(mark_dim))?;
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let v = parse_row(&rec?, i + 1)?;
        events.push(Spike {
            time: v[0],
            mark: DVector::from_column_slice(&v[1..]),
        });
    }
    SpikeTrain::new(events, horizon, mark_dim).map_err(|e| IoError::Row {
        row: 0,
        message: e.to_string(),
    })
}

pub fn belief_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|i| format!("mu_{i}")));
    for i in 1..=dim {
        for j in i..=dim {
            h.push(format!("sigma_{i}{j}"));
        }
    }
    h
}

pub fn belief_table(times: &[f64], beliefs: &[GaussianBelief]) -> Table {
    let dim = beliefs.first().map_or(1, GaussianBelief::dim);
    let mut t = Table::new(belief_header(dim));
    for (time, b) in times.iter().zip(beliefs) {
        let mut row = vec![*time];
        row.extend(b.mean.iter());
        row.extend(b.cov.upper_triangle());
        t.push(row);
    }
    t
}

pub fn write_beliefs<W: Write>(out: W, times: &[f64], beliefs: &[GaussianBelief]) -> Result<(), IoError> {
    belief_table(times, beliefs).write_to(out)
}

pub fn read_beliefs<R: Read>(input: R) -> Result<(Vec<f64>, Vec<GaussianBelief>), IoError> {
    let table = Table::read_from(input)?;
    let width = table.header.len();
    // 1 + n + n(n+1)/2 columns
    let dim = (1..=crate::dynamics::MAX_DIM)
        .find(|&n| 1 + n + n * (n + 1) / 2 == width)
        .ok_or_else(|| IoError::Header {
            expected: belief_header(1),
            found: table.header.clone(),
        })?;
    if table.header != belief_header(dim) {
        return Err(IoError::Header {
            expected: belief_header(dim),
            found: table.header,
        });
    }
    let mut times = Vec::with_capacity(table.rows.len());
    let mut beliefs = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        times.push(row[0]);
        let cov = SymMatrix::from_upper_triangle(dim, &row[1 + dim..]).map_err(|e| IoError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        beliefs.push(GaussianBelief::new(DVector::from_column_slice(&row[1..1 + dim]), cov));
    }
    Ok((times, beliefs))
}

pub fn path_table(path: &StatePath) -> Table {
    let dim = path.states.first().map_or(1, |x| x.len());
    let mut t = Table::new(std::iter::once("t".to_string()).chain((1..=dim).map(|i| format!("x_{i}"))));
    for (time, x) in path.times.iter().zip(&path.states) {
        let mut row = vec![*time];
        row.extend(x.iter());
        t.push(row);
    }
    t
}

/// Run metadata written next to the CSVs. Holds nothing that varies
/// between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, seed: u64, outputs: Vec<String>) -> Self {
        Manifest {
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        }
    }

    pub fn write_file(&self, path: &Path) -> Result<(), IoError> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
