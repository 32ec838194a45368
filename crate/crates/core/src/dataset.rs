//! Scattered concentration observations and their CSV form.
//!
//! Observation file: header `t,x,y,c` (2-D) or `t,x,y,z,c` (3-D), one record
//! per line, values written with 17 significant digits. Collocation file:
//! the same without the `c` column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HfmError, Result};
use crate::network::SpatialDim;

/// Observations `(t, x, y[, z], c)` plus optional separate collocation
/// points `(t, x, y[, z])`. Coordinates are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledDataset {
    pub dim: SpatialDim,
    points: Vec<f64>,
    c: Vec<f64>,
    collocation: Option<Vec<f64>>,
}

impl SampledDataset {
    pub fn new(dim: SpatialDim, points: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let stride = dim.n() + 1;
        if c.is_empty() {
            return Err(HfmError::InvalidInput("dataset must contain at least one record".into()));
        }
        if points.len() != c.len() * stride {
            return Err(HfmError::InvalidInput(format!(
                "{} coordinates for {} records of arity {stride}",
                points.len(),
                c.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(HfmError::InvalidInput(format!("non-finite coordinate in record {}", i / stride)));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(HfmError::InvalidInput(format!("non-finite concentration in record {i}")));
        }
        Ok(Self {
            dim,
            points,
            c,
            collocation: None,
        })
    }

    pub fn with_collocation(mut self, points: Vec<f64>) -> Result<Self> {
        let stride = self.stride();
        if points.is_empty() || !points.len().is_multiple_of(stride) {
            return Err(HfmError::InvalidInput("collocation set is empty or ragged".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(HfmError::InvalidInput("non-finite collocation coordinate".into()));
        }
        self.collocation = Some(points);
        Ok(self)
    }

    /// Coordinates per record: `dim + 1`.
    pub fn stride(&self) -> usize {
        self.dim.n() + 1
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.points[i * s..(i + 1) * s]
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Auxiliary complement `1 − c` of record `i`.
    pub fn d(&self, i: usize) -> f64 {
        1.0 - self.c[i]
    }

    pub fn collocation(&self) -> Option<&[f64]> {
        self.collocation.as_deref()
    }

    pub fn collocation_len(&self) -> usize {
        self.collocation.as_ref().map_or(0, |p| p.len() / self.stride())
    }

    /// Per-coordinate `(lo, hi)` over observations and collocation points.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.stride();
        let mut lo = vec![f64::INFINITY; s];
        let mut hi = vec![f64::NEG_INFINITY; s];
        let all = self.points.chunks(s).chain(self.collocation.iter().flat_map(|p| p.chunks(s)));
        for p in all {
            for k in 0..s {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

fn header(dim: SpatialDim, with_c: bool) -> Vec<&'static str> {
    let mut h = vec!["t", "x", "y"];
    if dim == SpatialDim::Three {
        h.push("z");
    }
    if with_c {
        h.push("c");
    }
    h
}

/// Formats with 17 significant digits; parses back to the same bits.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_rows(path: &Path, head: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let file = File::create(path).map_err(|e| HfmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| HfmError::io(path, e);
    writeln!(w, "{}", head.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt17).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a numeric CSV, returning the header and flattened rows.
pub(crate) fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let head: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != head.len() {
            return Err(HfmError::Parse {
                path: path.into(),
                line,
                message: format!("expected {} fields, found {}", head.len(), record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| HfmError::Parse {
                path: path.into(),
                line,
                message: format!("column '{}': cannot parse '{field}' as a number", head[col]),
            })?;
            values.push(v);
        }
    }
    Ok((head, values))
}

fn csv_error(path: &Path, e: csv::Error) -> HfmError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HfmError::io(path, source),
        kind => HfmError::Parse {
            path: path.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn dim_from_header(path: &Path, head: &[String], with_c: bool) -> Result<SpatialDim> {
    for dim in [SpatialDim::Two, SpatialDim::Three] {
        if header(dim, with_c).iter().eq(head.iter()) {
            return Ok(dim);
        }
    }
    Err(HfmError::Parse {
        path: path.into(),
        line: 1,
        message: format!(
            "unexpected header '{}', want '{}' or '{}'",
            head.join(","),
            header(SpatialDim::Two, with_c).join(","),
            header(SpatialDim::Three, with_c).join(",")
        ),
    })
}

/// Writes the observations (the collocation set, if any, is a separate file;
/// see [`export_collocation`]).
pub fn export_dataset(dataset: &SampledDataset, path: &Path) -> Result<()> {
    let rows = (0..dataset.len()).map(|i| {
        let mut r = dataset.point(i).to_vec();
        r.push(dataset.c[i]);
        r
    });
    write_rows(path, &header(dataset.dim, true), rows)
}

pub fn import_dataset(path: &Path) -> Result<SampledDataset> {
    let (head, values) = read_numeric_csv(path)?;
    let dim = dim_from_header(path, &head, true)?;
    let w = head.len();
    if values.is_empty() {
        return Err(HfmError::Parse {
            path: path.into(),
            line: 1,
            message: "dataset has no records".into(),
        });
    }
    let mut points = Vec::with_capacity(values.len() / w * (w - 1));
    let mut c = Vec::with_capacity(values.len() / w);
    for row in values.chunks(w) {
        points.extend_from_slice(&row[..w - 1]);
        c.push(row[w - 1]);
    }
    SampledDataset::new(dim, points, c)
}

pub fn export_collocation(dim: SpatialDim, points: &[f64], path: &Path) -> Result<()> {
    let s = dim.n() + 1;
    write_rows(path, &header(dim, false), points.chunks(s).map(<[f64]>::to_vec))
}

pub fn import_collocation(path: &Path) -> Result<(SpatialDim, Vec<f64>)> {
    let (head, values) = read_numeric_csv(path)?;
    let dim = dim_from_header(path, &head, false)?;
    if values.is_empty() {
        return Err(HfmError::Parse {
            path: path.into(),
            line: 1,
            message: "collocation file has no records".into(),
        });
    }
    Ok((dim, values))
}

/// Provenance written next to a generated dataset as `<path>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub flow: String,
    pub reynolds: f64,
    pub peclet: f64,
    pub grid: usize,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_interval: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub count: usize,
}

impl DatasetMetadata {
    pub fn write(&self, dataset_path: &Path) -> Result<()> {
        let path = crate::network::checkpoint::sidecar_path(dataset_path);
        let json = serde_json::to_string_pretty(self).expect("metadata serialises");
        std::fs::write(&path, json).map_err(|e| HfmError::io(&path, e))
    }

    pub fn read(dataset_path: &Path) -> Result<Self> {
        let path = crate::network::checkpoint::sidecar_path(dataset_path);
        let text = std::fs::read_to_string(&path).map_err(|e| HfmError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HfmError::Parse {
            path: path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}
